//! Interleaved flow integration and stochastic frame insertion.
//!
//! Every generated frame carries an integer solver age. Its solver
//! coordinate is `u = min(1, age * h)` and its time is `u^gamma`. A global
//! clock with the same step drives the insertion hazard, so starting frames
//! always sit at `t = t_g`. One step evaluates the field once, moves every
//! unfinished frame along its velocity, then samples insertions for the
//! global-time interval just traversed.
//!
//! The last interval ends at `t_g = 1`, where the integrated hazard is
//! infinite. There the expected remaining count `lambda` is inserted at once:
//! Bernoulli mode fires with probability `min(1, lambda)` and re-rolls the
//! slots it touched until nothing more fires; Poisson mode draws
//! `Poisson(lambda)` per slot.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ContextFrame, ContextRole, ContextSpec, FieldModel, FieldOutput};
use crate::rng::{self, streams};
use crate::schedule::{Scheduler, HAZARD_CUTOFF};
use crate::seq::{Frame, FrameSeq, FrameShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Thinning {
    Bernoulli,
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub h: f64,
    pub n_start: usize,
    pub thinning: Thinning,
    /// Use `1 - exp(-lambda * int rho)` instead of `h * rho * lambda`.
    pub exact_integral: bool,
    pub w_s: f64,
    pub gamma: f64,
    pub max_len: usize,
    pub max_inserts_per_slot_step: u32,
    pub seed: u64,
    pub scheduler: Scheduler,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            h: 0.02,
            n_start: 1,
            thinning: Thinning::Bernoulli,
            exact_integral: true,
            w_s: 1.0,
            gamma: 1.0,
            max_len: 64,
            max_inserts_per_slot_step: 8,
            seed: 0,
            scheduler: Scheduler::Linear,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::invalid(format!("step size {} outside (0, 1]", self.h)));
        }
        if self.n_start == 0 {
            return Err(Error::invalid("n_start must be at least 1"));
        }
        if !(self.w_s >= 1.0 && self.w_s.is_finite()) {
            return Err(Error::invalid(format!("guidance scale {} must be >= 1", self.w_s)));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("time-warp exponent {} must be >= 1", self.gamma)));
        }
        if self.max_len < self.n_start {
            return Err(Error::invalid("max_len must be at least n_start"));
        }
        if self.max_inserts_per_slot_step == 0 {
            return Err(Error::invalid("max_inserts_per_slot_step must be positive"));
        }
        Ok(())
    }

    /// Number of solver steps for a clock to travel from 0 to 1.
    pub fn steps_to_one(&self) -> u64 {
        (1.0 / self.h - 1e-9).ceil().max(1.0) as u64
    }

    /// Upper bound on outer iterations.
    pub fn step_bound(&self) -> u64 {
        2 * (1.0 / self.h).ceil() as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Insertion {
    /// Index of the owning frame in the sequence it was inserted into.
    pub slot: usize,
    pub t_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    /// Global time after the step.
    pub t_g: f64,
    /// Frames moved by the flow update.
    pub n_active: usize,
    /// Sequence length after the step.
    pub n_visible: usize,
    pub inserted_slots: Vec<usize>,
    pub insertions: Vec<Insertion>,
    pub t_before: Vec<f64>,
    pub t_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SampleTrace {
    pub steps: Vec<StepRecord>,
    pub truncated: bool,
    /// Final positions of the context frames.
    pub context_positions: Vec<usize>,
}

impl SampleTrace {
    pub fn step_count(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn total_insertions(&self) -> usize {
        self.steps.iter().map(|s| s.insertions.len()).sum()
    }

    /// One JSON object per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("plain data serialises"));
            out.push('\n');
        }
        out
    }
}

/// `t = u^gamma` and the physical step `(u + du)^gamma - u^gamma`.
pub fn time_warp(u: f64, du: f64, gamma: f64) -> (f64, f64) {
    let t = u.powf(gamma);
    (t, (u + du).min(1.0).powf(gamma) - t)
}

/// Guided rates `lambda_c^w * lambda_u^(1 - w)`, evaluated in log space.
pub fn rate_cfg(lambda_cond: &[f64], lambda_uncond: &[f64], w_s: f64) -> Result<Vec<f64>> {
    if lambda_cond.len() != lambda_uncond.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rates", lambda_cond.len()),
            got: format!("{} rates", lambda_uncond.len()),
        });
    }
    lambda_cond
        .iter()
        .zip(lambda_uncond)
        .map(|(&c, &u)| {
            if !(c > 0.0 && u > 0.0) {
                return Err(Error::invalid(format!("guided rates must be positive, got {c} and {u}")));
            }
            if w_s == 1.0 {
                return Ok(c);
            }
            let r = (w_s * c.ln() + (1.0 - w_s) * u.ln()).exp();
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::NonFinite(format!("guided rate from {c}, {u} at w = {w_s}")))
            }
        })
        .collect()
}

fn is_final(t_g: f64, dt: f64) -> bool {
    t_g + dt >= HAZARD_CUTOFF
}

/// Per-slot firing probabilities for one interval `[t_g, t_g + dt]`.
pub fn insertion_probabilities(
    lambda: &[f64],
    t_g: f64,
    dt: f64,
    s: &Scheduler,
    exact_integral: bool,
) -> Result<Vec<f64>> {
    if t_g >= HAZARD_CUTOFF {
        return Err(Error::Divergent(t_g));
    }
    if is_final(t_g, dt) {
        return Ok(lambda.iter().map(|l| l.clamp(0.0, 1.0)).collect());
    }
    if exact_integral {
        let big = s.integrated_hazard(t_g, dt)?;
        Ok(lambda.iter().map(|l| -(-l * big).exp_m1()).collect())
    } else {
        let rho = s.hazard(t_g)?;
        Ok(lambda.iter().map(|l| (dt * rho * l).clamp(0.0, 1.0)).collect())
    }
}

/// Expected insertion counts for one interval `[t_g, t_g + dt]`.
pub fn insertion_means(
    lambda: &[f64],
    t_g: f64,
    dt: f64,
    s: &Scheduler,
    exact_integral: bool,
) -> Result<Vec<f64>> {
    if t_g >= HAZARD_CUTOFF {
        return Err(Error::Divergent(t_g));
    }
    if is_final(t_g, dt) {
        return Ok(lambda.to_vec());
    }
    let factor = if exact_integral {
        s.integrated_hazard(t_g, dt)?
    } else {
        dt * s.hazard(t_g)?
    };
    Ok(lambda.iter().map(|l| l * factor).collect())
}

/// At most one insertion per slot.
pub fn bernoulli_insertions<R: Rng + ?Sized>(
    lambda: &[f64],
    t_g: f64,
    dt: f64,
    s: &Scheduler,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let p = insertion_probabilities(lambda, t_g, dt, s, cfg.exact_integral)?;
    Ok(p.iter().map(|&p| p > 0.0 && rng.random::<f64>() < p).collect())
}

/// Poisson counts per slot, capped at `max_inserts_per_slot_step`.
pub fn poisson_insertions<R: Rng + ?Sized>(
    lambda: &[f64],
    t_g: f64,
    dt: f64,
    s: &Scheduler,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let means = insertion_means(lambda, t_g, dt, s, cfg.exact_integral)?;
    means
        .iter()
        .map(|&m| {
            if m <= 0.0 {
                return Ok(0);
            }
            let d = Poisson::new(m).map_err(|e| Error::NonFinite(format!("Poisson mean {m}: {e}")))?;
            let n: f64 = d.sample(rng);
            Ok((n as u64).min(cfg.max_inserts_per_slot_step as u64) as u32)
        })
        .collect()
}

/// Task presets built from the active/passive primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Unconditional,
    I2v,
    Interpolation,
}

impl Preset {
    pub fn context(&self, frames: Vec<Frame>, n_start: usize) -> Result<ContextSpec> {
        match self {
            Preset::Unconditional => Ok(ContextSpec::none()),
            Preset::I2v => {
                let first = frames
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::invalid("i2v needs a context frame"))?;
                Ok(ContextSpec::i2v(first))
            }
            Preset::Interpolation => ContextSpec::interpolation(frames, n_start),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconditional" | "none" => Ok(Preset::Unconditional),
            "i2v" => Ok(Preset::I2v),
            "interpolation" => Ok(Preset::Interpolation),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }
}

struct Slot {
    frame: Frame,
    t: f64,
    age: u64,
    role: Option<ContextRole>,
}

impl Slot {
    fn generated(&self) -> bool {
        self.role.is_none()
    }
}

struct State {
    shape: FrameShape,
    slots: Vec<Slot>,
}

impl State {
    fn init(shape: FrameShape, ctx: &ContextSpec, n_start: usize, noise: &mut rng::Rng) -> Result<Self> {
        let len = n_start + ctx.len();
        ctx.check_fits(len)?;
        let mut slots = Vec::with_capacity(len);
        for pos in 0..len {
            slots.push(match ctx.at(pos) {
                Some(c) => {
                    if c.frame.shape() != shape {
                        return Err(Error::ShapeMismatch {
                            expected: shape.to_string(),
                            got: c.frame.shape().to_string(),
                        });
                    }
                    Slot {
                        frame: c.frame.clone(),
                        t: 1.0,
                        age: 0,
                        role: Some(c.role),
                    }
                }
                None => Slot {
                    frame: Frame::noise(shape, noise),
                    t: 0.0,
                    age: 0,
                    role: None,
                },
            });
        }
        Ok(Self { shape, slots })
    }

    fn seq(&self) -> Result<FrameSeq> {
        FrameSeq::new(self.shape, self.slots.iter().map(|s| s.frame.clone()).collect())
    }

    fn times(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.t).collect()
    }

    fn context(&self) -> Result<ContextSpec> {
        ContextSpec::new(
            self.slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    s.role.map(|role| ContextFrame {
                        position: i,
                        frame: s.frame.clone(),
                        role,
                    })
                })
                .collect(),
        )
    }

    fn unfinished(&self) -> bool {
        self.slots.iter().any(|s| s.generated() && s.t < 1.0)
    }
}

fn evaluate<M: FieldModel + ?Sized>(model: &M, state: &State, cfg: &SamplerConfig) -> Result<FieldOutput> {
    let x = state.seq()?;
    let t = state.times();
    let ctx = state.context()?;
    let mut out = model.eval(&x, &t, &ctx, false)?;
    out.validate(x.len())?;
    if cfg.w_s != 1.0 && !ctx.is_empty() {
        let unc = model.eval(&x, &t, &ctx, true)?;
        unc.validate(x.len())?;
        out.lambda = rate_cfg(&out.lambda, &unc.lambda, cfg.w_s)?;
    }
    for (l, s) in out.lambda.iter_mut().zip(&state.slots) {
        if s.role == Some(ContextRole::Passive) {
            *l = 0.0;
        }
    }
    Ok(out)
}

/// Inserts `counts[j]` noise frames right of frame `j`. Returns the
/// recorded events and the indices (after insertion) of touched slots.
fn apply_insertions(
    state: &mut State,
    counts: &[u32],
    t_g: f64,
    max_len: usize,
    noise: &mut rng::Rng,
    truncated: &mut bool,
) -> (Vec<Insertion>, Vec<usize>) {
    let mut events = Vec::new();
    let mut touched = Vec::new();
    let old = std::mem::take(&mut state.slots);
    let mut len = old.len();
    for (j, slot) in old.into_iter().enumerate() {
        let fired = counts[j];
        let owner = state.slots.len();
        state.slots.push(slot);
        let mut placed = 0;
        for _ in 0..fired {
            if len >= max_len {
                *truncated = true;
                break;
            }
            touched.push(state.slots.len());
            state.slots.push(Slot {
                frame: Frame::noise(state.shape, noise),
                t: 0.0,
                age: 0,
                role: None,
            });
            events.push(Insertion { slot: j, t_g });
            len += 1;
            placed += 1;
        }
        if placed > 0 {
            touched.push(owner);
        }
    }
    touched.sort_unstable();
    (events, touched)
}

/// Runs the full generation loop.
pub fn generate<M: FieldModel + ?Sized>(
    model: &M,
    shape: FrameShape,
    cfg: &SamplerConfig,
    ctx: &ContextSpec,
) -> Result<(FrameSeq, SampleTrace)> {
    cfg.validate()?;
    let mut noise = rng::stream(cfg.seed, streams::NOISE);
    let mut thin = rng::stream(cfg.seed, streams::THINNING);
    let mut state = State::init(shape, ctx, cfg.n_start, &mut noise)?;
    if state.slots.len() > cfg.max_len {
        return Err(Error::invalid("context plus starting frames exceed max_len"));
    }
    let mut trace = SampleTrace::default();
    let n_one = cfg.steps_to_one();
    let clock = |k: u64| -> f64 {
        if k >= n_one {
            1.0
        } else {
            (k as f64 * cfg.h).min(1.0).powf(cfg.gamma)
        }
    };
    let mut k_g = 0u64;
    let mut step = 0u64;

    while clock(k_g) < 1.0 || state.unfinished() {
        step += 1;
        let t_g_old = clock(k_g);
        let out = evaluate(model, &state, cfg)?;
        let t_before = state.times();

        let mut n_active = 0;
        for (s, v) in state.slots.iter_mut().zip(&out.v) {
            if !s.generated() || s.t >= 1.0 {
                continue;
            }
            n_active += 1;
            s.age += 1;
            let t_new = clock(s.age);
            let dt = t_new - s.t;
            let vals = s
                .frame
                .values()
                .iter()
                .zip(v.values())
                .map(|(x, vx)| (*x as f64 + dt * *vx as f64) as f32)
                .collect();
            s.frame = Frame::new(shape, vals)?;
            s.t = t_new;
        }
        if k_g < n_one {
            k_g += 1;
        }
        let t_g_new = clock(k_g);

        let mut insertions = Vec::new();
        if t_g_old < HAZARD_CUTOFF && !trace.truncated {
            let dt = t_g_new - t_g_old;
            let counts: Vec<u32> = match cfg.thinning {
                Thinning::Bernoulli => bernoulli_insertions(&out.lambda, t_g_old, dt, &cfg.scheduler, cfg, &mut thin)?
                    .into_iter()
                    .map(u32::from)
                    .collect(),
                Thinning::Poisson => poisson_insertions(&out.lambda, t_g_old, dt, &cfg.scheduler, cfg, &mut thin)?,
            };
            let (events, mut touched) =
                apply_insertions(&mut state, &counts, t_g_new, cfg.max_len, &mut noise, &mut trace.truncated);
            insertions.extend(events);

            // flush the remainder: re-roll touched slots until none fire
            if cfg.thinning == Thinning::Bernoulli && is_final(t_g_old, dt) {
                while !touched.is_empty() && !trace.truncated {
                    let out = evaluate(model, &state, cfg)?;
                    let mut counts = vec![0u32; state.slots.len()];
                    for &j in &touched {
                        let p = out.lambda[j].clamp(0.0, 1.0);
                        counts[j] = (p > 0.0 && thin.random::<f64>() < p) as u32;
                    }
                    if counts.iter().all(|&c| c == 0) {
                        break;
                    }
                    let (events, next) =
                        apply_insertions(&mut state, &counts, t_g_new, cfg.max_len, &mut noise, &mut trace.truncated);
                    insertions.extend(events);
                    touched = next;
                }
            }
        }

        trace.steps.push(StepRecord {
            step,
            t_g: t_g_new,
            n_active,
            n_visible: state.slots.len(),
            inserted_slots: insertions.iter().map(|e| e.slot).collect(),
            insertions,
            t_before,
            t_after: state.times(),
        });
        if step > cfg.step_bound() {
            return Err(Error::invalid(format!(
                "sampler exceeded {} steps",
                cfg.step_bound()
            )));
        }
    }

    trace.context_positions = state
        .slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.role.is_some())
        .map(|(i, _)| i)
        .collect();
    Ok((state.seq()?, trace))
}
