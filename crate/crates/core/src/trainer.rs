//! Snapshot construction, optimisers and the training loop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::{pending_counts, LossReport, LossWeights, PendingCounts};
use crate::model::{ContextSpec, ReferenceNet};
use crate::rng::{self, streams};
use crate::schedule::{sample_training_times, GlobalTimeDist, Scheduler, TrainingTimes};
use crate::seq::{Frame, FrameSeq, FrameState};

/// One noised training example with its regression and count targets.
#[derive(Debug, Clone)]
pub struct TrainingSnapshot {
    /// Visible frames, `t * x1 + (1 - t) * x0`.
    pub x: FrameSeq,
    pub t: Vec<f64>,
    pub t_g: f64,
    pub x1: Vec<Frame>,
    pub x0: Vec<Frame>,
    /// `x1 - x0` per visible frame.
    pub velocity_target: Vec<Frame>,
    /// Flowing frames; only these enter the velocity loss.
    pub active: Vec<bool>,
    pub counts: PendingCounts,
    pub ctx: ContextSpec,
    pub cond_dropped: bool,
}

impl TrainingSnapshot {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn lerp(x0: &Frame, x1: &Frame, t: f64) -> Result<Frame> {
    let vals = x0
        .values()
        .iter()
        .zip(x1.values())
        .map(|(a, b)| (t * *b as f64 + (1.0 - t) * *a as f64) as f32)
        .collect();
    Frame::new(x0.shape(), vals)
}

fn diff(x1: &Frame, x0: &Frame) -> Result<Frame> {
    let vals = x1
        .values()
        .iter()
        .zip(x0.values())
        .map(|(a, b)| (*a as f64 - *b as f64) as f32)
        .collect();
    Frame::new(x1.shape(), vals)
}

/// Builds a snapshot from fixed times and noise.
///
/// `generated` is the part of the video that is noised; when `context` is
/// set it is placed, clean and with `t = 1`, in front of the generated part.
pub fn snapshot_from_times(
    generated: &[Frame],
    times: &TrainingTimes,
    x0: &[Frame],
    context: Option<&Frame>,
    cond_dropped: bool,
) -> Result<TrainingSnapshot> {
    let n = generated.len();
    if times.t.len() != n || x0.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} times and noise frames"),
            got: format!("{} times, {} noise frames", times.t.len(), x0.len()),
        });
    }
    let shape = generated
        .first()
        .map(|f| f.shape())
        .ok_or_else(|| Error::invalid("empty video"))?;
    let mut mask = Vec::with_capacity(n + 1);
    let mut snap = TrainingSnapshot {
        x: FrameSeq::empty(shape),
        t: Vec::new(),
        t_g: times.t_g(),
        x1: Vec::new(),
        x0: Vec::new(),
        velocity_target: Vec::new(),
        active: Vec::new(),
        counts: PendingCounts(Vec::new()),
        ctx: ContextSpec::none(),
        cond_dropped,
    };
    if let Some(c) = context {
        snap.x.push(c.clone())?;
        snap.t.push(1.0);
        snap.x1.push(c.clone());
        snap.x0.push(Frame::zeros(shape));
        snap.velocity_target.push(Frame::zeros(shape));
        snap.active.push(false);
        snap.ctx = ContextSpec::i2v(c.clone());
        mask.push(true);
    }
    for i in 0..n {
        let visible = times.visible_mask[i];
        mask.push(visible);
        if !visible {
            continue;
        }
        let t = times.t[i];
        // clean content exactly once the frame has finished flowing
        let xt = if t >= 1.0 {
            generated[i].clone()
        } else {
            lerp(&x0[i], &generated[i], t)?
        };
        snap.x.push(xt)?;
        snap.t.push(t);
        snap.x1.push(generated[i].clone());
        snap.x0.push(x0[i].clone());
        snap.velocity_target.push(diff(&generated[i], &x0[i])?);
        snap.active.push(times.states[i] == FrameState::Flowing);
    }
    snap.counts = pending_counts(&mask)?;
    Ok(snap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    None,
    /// Image-to-video: the first frame becomes an active context frame.
    FirstFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub n_start: usize,
    pub scheduler: Scheduler,
    pub time_dist: GlobalTimeDist,
    pub weights: LossWeights,
    pub context: ContextMode,
    /// Fraction of snapshots that carry the context when `context` is set.
    pub context_prob: f64,
    pub cond_dropout_prob: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            n_start: 1,
            scheduler: Scheduler::Linear,
            time_dist: GlobalTimeDist::default(),
            weights: LossWeights::default(),
            context: ContextMode::None,
            context_prob: 0.5,
            cond_dropout_prob: 0.1,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.n_start == 0 {
            return Err(Error::invalid("n_start must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.cond_dropout_prob) {
            return Err(Error::invalid("cond_dropout_prob must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.context_prob) {
            return Err(Error::invalid("context_prob must lie in [0, 1]"));
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::invalid("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Draws times, noise and the conditioning decision for one video.
pub fn make_snapshot<R: Rng + ?Sized>(
    video: &FrameSeq,
    scheduler: &Scheduler,
    dist: &GlobalTimeDist,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingSnapshot> {
    if video.is_empty() {
        return Err(Error::invalid("training video is empty"));
    }
    let with_ctx = cfg.context == ContextMode::FirstFrame
        && video.len() > cfg.n_start
        && rng.random::<f64>() < cfg.context_prob;
    let frames = video.frames();
    let (context, generated) = if with_ctx {
        (Some(&frames[0]), &frames[1..])
    } else {
        (None, frames)
    };
    let n_start = cfg.n_start.min(generated.len());
    let times = sample_training_times(scheduler, dist, generated.len(), n_start, rng)?;
    let x0: Vec<Frame> = generated
        .iter()
        .map(|f| Frame::noise(f.shape(), rng))
        .collect();
    let dropped = with_ctx && cfg.cond_dropout_prob > 0.0 && rng.random::<f64>() < cfg.cond_dropout_prob;
    snapshot_from_times(generated, &times, &x0, context, dropped)
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t as i32);
                let c2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

/// One gradient step on `batch`; returns the loss before the update.
pub fn train_step(
    net: &mut ReferenceNet,
    batch: &[TrainingSnapshot],
    opt: &mut Optimizer,
    scheduler: &Scheduler,
    weights: &LossWeights,
    grad_clip: Option<f64>,
) -> Result<LossReport> {
    let mut bg = net.batch_loss(net.params(), batch, scheduler, weights, true)?;
    if bg.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    if let Some(clip) = grad_clip {
        let norm = bg.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > clip {
            let s = clip / norm;
            bg.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    let mut params = net.params().to_vec();
    opt.update(&mut params, &bg.grad);
    net.set_params(&params)?;
    Ok(bg.report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub snapshots: u64,
    pub with_context: u64,
    pub cond_dropped: u64,
}

pub struct Trainer {
    pub net: ReferenceNet,
    pub config: TrainConfig,
    opt: Optimizer,
    step: u64,
    stats: TrainStats,
}

impl Trainer {
    pub fn new(net: ReferenceNet, config: TrainConfig) -> Result<Self> {
        Self::resume(net, config, 0)
    }

    /// Continues from `step`. Optimiser moments restart from zero.
    pub fn resume(net: ReferenceNet, config: TrainConfig, step: u64) -> Result<Self> {
        config.validate()?;
        let opt = Optimizer::new(config.optimizer, config.lr, net.params().len());
        Ok(Self {
            net,
            config,
            opt,
            step,
            stats: TrainStats::default(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    /// Snapshots for the current step. Randomness is keyed by the step index
    /// so a resumed run draws the same batches as an uninterrupted one.
    pub fn sample_batch(&mut self, data: &[FrameSeq]) -> Result<Vec<TrainingSnapshot>> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut pick = rng::run_stream(self.config.seed, streams::BATCH, self.step);
        let mut draw = rng::run_stream(self.config.seed, streams::TIMES, self.step);
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let video = &data[pick.random_range(0..data.len())];
            let snap = make_snapshot(
                video,
                &self.config.scheduler,
                &self.config.time_dist,
                &self.config,
                &mut draw,
            )?;
            self.stats.snapshots += 1;
            self.stats.with_context += !snap.ctx.is_empty() as u64;
            self.stats.cond_dropped += snap.cond_dropped as u64;
            batch.push(snap);
        }
        Ok(batch)
    }

    pub fn train_on(&mut self, batch: &[TrainingSnapshot]) -> Result<LossReport> {
        let report = train_step(
            &mut self.net,
            batch,
            &mut self.opt,
            &self.config.scheduler,
            &self.config.weights,
            self.config.grad_clip,
        )?;
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.steps`, calling `log` after every step.
    pub fn run(&mut self, data: &[FrameSeq], mut log: impl FnMut(u64, &LossReport)) -> Result<()> {
        while self.step < self.config.steps {
            let batch = self.sample_batch(data)?;
            let report = self.train_on(&batch)?;
            log(self.step, &report);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::FrameShape;

    const S: FrameShape = FrameShape::new(1, 1, 1);

    fn video(vals: &[f32]) -> FrameSeq {
        FrameSeq::new(S, vals.iter().map(|v| Frame::filled(S, *v)).collect()).unwrap()
    }

    #[test]
    fn hand_traced_snapshot_at_zero_time() {
        let v = video(&[1.0, 2.0, 3.0]);
        let times = TrainingTimes::from_offsets(vec![0.0, 0.3, 0.7], 0.0).unwrap();
        let x0 = vec![Frame::filled(S, -1.0); 3];
        let snap = snapshot_from_times(v.frames(), &times, &x0, None, false).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap.t, vec![0.0]);
        assert_eq!(snap.counts.0, vec![2]);
        assert_eq!(snap.x.frames()[0].values(), &[-1.0]);
        assert_eq!(snap.active, vec![true]);
    }

    #[test]
    fn terminal_frames_are_clean() {
        let v = video(&[0.3, -0.7]);
        let times = TrainingTimes::from_offsets(vec![0.0, 0.4], 1.2).unwrap();
        let x0 = vec![Frame::filled(S, 0.9); 2];
        let snap = snapshot_from_times(v.frames(), &times, &x0, None, false).unwrap();
        assert_eq!(snap.x.frames()[0].values(), &[0.3]);
        assert_eq!(snap.active, vec![false, true]);
        let want = 0.8 * -0.7f64 + 0.2 * 0.9;
        assert!((snap.x.frames()[1].values()[0] as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn context_snapshot_prepends_clean_frame() {
        let v = video(&[5.0, 1.0, 2.0]);
        let times = TrainingTimes::from_offsets(vec![0.0, 0.9], 0.5).unwrap();
        let x0 = vec![Frame::filled(S, 0.0); 2];
        let snap =
            snapshot_from_times(&v.frames()[1..], &times, &x0, Some(&v.frames()[0]), false).unwrap();
        assert_eq!(snap.len(), 2);
        assert_eq!(snap.t, vec![1.0, 0.5]);
        assert_eq!(snap.counts.0, vec![0, 1]);
        assert_eq!(snap.active, vec![false, true]);
        assert_eq!(snap.ctx.len(), 1);
    }

    #[test]
    fn no_dropout_counter_with_zero_probability() {
        let cfg = TrainConfig {
            context: ContextMode::FirstFrame,
            context_prob: 1.0,
            cond_dropout_prob: 0.0,
            ..TrainConfig::default()
        };
        let mut r = rng::stream(1, streams::TIMES);
        let v = video(&[0.0, 1.0, 2.0, 3.0]);
        for _ in 0..200 {
            let s = make_snapshot(&v, &cfg.scheduler, &cfg.time_dist, &cfg, &mut r).unwrap();
            assert!(!s.cond_dropped);
            assert!(!s.ctx.is_empty());
        }
    }

    #[test]
    fn sgd_and_adam_move_against_the_gradient() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.1, 2);
            let mut p = vec![1.0, -1.0];
            opt.update(&mut p, &[1.0, -2.0]);
            assert!(p[0] < 1.0 && p[1] > -1.0);
        }
    }
}
