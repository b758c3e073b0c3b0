//! Reveal schedulers, their hazard, and training-time sampling of extended
//! times.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seq::{FrameState, TimeState};

/// Upper end of the domain on which the hazard is finite for our purposes.
pub const HAZARD_CUTOFF: f64 = 1.0 - 1e-9;

/// Monotone reveal schedule `kappa: [0,1] -> [0,1]` with `kappa(0)=0`,
/// `kappa(1)=1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Scheduler {
    #[default]
    Linear,
    /// `kappa(t) = t^p`, `p > 0`.
    Power(f64),
}

impl Scheduler {
    pub fn power(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(format!("power exponent must be > 0, got {p}")));
        }
        Ok(if p == 1.0 {
            Scheduler::Linear
        } else {
            Scheduler::Power(p)
        })
    }

    pub fn kappa(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            Scheduler::Linear => t,
            Scheduler::Power(p) => t.powf(p),
        }
    }

    pub fn kappa_dot(&self, t: f64) -> f64 {
        match *self {
            Scheduler::Linear => 1.0,
            Scheduler::Power(p) => p * t.powf(p - 1.0),
        }
    }

    pub fn kappa_inv(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Scheduler::Linear => u,
            Scheduler::Power(p) => u.powf(1.0 / p),
        }
    }

    /// Instantaneous reveal hazard `kappa_dot / (1 - kappa)`.
    ///
    /// Zero before `t = 0`; rejected at or beyond [`HAZARD_CUTOFF`].
    pub fn hazard(&self, t: f64) -> Result<f64> {
        if t.is_nan() {
            return Err(Error::NotANumber("hazard"));
        }
        if t >= HAZARD_CUTOFF {
            return Err(Error::Divergent(t));
        }
        if t < 0.0 {
            return Ok(0.0);
        }
        let rate = self.kappa_dot(t) / (1.0 - self.kappa(t));
        if !rate.is_finite() {
            return Err(Error::Divergent(t));
        }
        Ok(rate)
    }

    /// `int_t^{t+h} hazard(s) ds = ln((1 - kappa(t)) / (1 - kappa(t + h)))`.
    pub fn integrated_hazard(&self, t: f64, h: f64) -> Result<f64> {
        if t.is_nan() || h.is_nan() {
            return Err(Error::NotANumber("integrated_hazard"));
        }
        if t < 0.0 || h < 0.0 {
            return Err(Error::invalid(format!(
                "integrated_hazard needs 0 <= t and h >= 0, got t={t}, h={h}"
            )));
        }
        if h == 0.0 {
            return Ok(0.0);
        }
        if t + h > HAZARD_CUTOFF {
            return Err(Error::Divergent(t + h));
        }
        Ok((-self.kappa(t)).ln_1p() - (-self.kappa(t + h)).ln_1p())
    }

    /// Fraction of the frames still hidden at `t0` that get revealed by `t1`.
    pub fn reveal_fraction(&self, t0: f64, t1: f64) -> f64 {
        let s0 = 1.0 - self.kappa(t0);
        if s0 <= 0.0 {
            return 1.0;
        }
        ((self.kappa(t1) - self.kappa(t0)) / s0).clamp(0.0, 1.0)
    }

    /// Per-frame reveal offsets: zero for the first `n_start` frames,
    /// `kappa_inv(u)` with `u ~ U(0,1)` for the rest.
    pub fn sample_offsets<R: Rng + ?Sized>(
        &self,
        n: usize,
        n_start: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if n_start > n {
            return Err(Error::invalid(format!(
                "n_start ({n_start}) exceeds frame count ({n})"
            )));
        }
        Ok((0..n)
            .map(|i| {
                if i < n_start {
                    0.0
                } else {
                    self.kappa_inv(rng.random::<f64>())
                }
            })
            .collect())
    }
}

/// Law of the extended global time on `[0, tau_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalTimeDist {
    Uniform,
    /// `tau_max * sigmoid(N(mu, sigma))`.
    LogitNormal { mu: f64, sigma: f64 },
    /// The "lognorm" timestep sampler used for diffusion training, rescaled
    /// to `[0, tau_max]`. Shares the logistic map with `LogitNormal`.
    LogNormScaled { mu: f64, sigma: f64 },
}

impl Default for GlobalTimeDist {
    fn default() -> Self {
        GlobalTimeDist::LogNormScaled { mu: 0.0, sigma: 1.0 }
    }
}

impl GlobalTimeDist {
    pub fn sample<R: Rng + ?Sized>(&self, tau_max: f64, rng: &mut R) -> f64 {
        let unit = match *self {
            GlobalTimeDist::Uniform => rng.random::<f64>(),
            GlobalTimeDist::LogitNormal { mu, sigma }
            | GlobalTimeDist::LogNormScaled { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                1.0 / (1.0 + (-(mu + sigma * z)).exp())
            }
        };
        unit * tau_max
    }
}

/// Extended and clipped times for every frame of one training target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTimes {
    pub tau_g: f64,
    pub tau_max: f64,
    pub offsets: Vec<f64>,
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    pub states: Vec<FrameState>,
    pub visible_mask: Vec<bool>,
}

impl TrainingTimes {
    /// Builds the times for a given global time; `tau_i = tau_g - offset_i`.
    pub fn from_offsets(offsets: Vec<f64>, tau_g: f64) -> Result<Self> {
        let tau_max = offsets.iter().copied().fold(0.0, f64::max) + 1.0;
        let tau = offsets.iter().map(|o| tau_g - o).collect();
        let ts = TimeState::from_extended(tau_g, tau)?;
        let visible_mask = ts.visible_mask();
        Ok(Self {
            tau_g,
            tau_max,
            offsets,
            tau: ts.tau,
            t: ts.t,
            states: ts.states,
            visible_mask,
        })
    }

    pub fn t_g(&self) -> f64 {
        self.tau_g.clamp(0.0, 1.0)
    }

    pub fn n_flowing(&self) -> usize {
        self.states
            .iter()
            .filter(|s| **s == FrameState::Flowing)
            .count()
    }
}

/// Samples offsets first, then `tau_g ~ dist` on `[0, max(offset) + 1]`,
/// redrawing `tau_g` until at least one frame is flowing.
pub fn sample_training_times<R: Rng + ?Sized>(
    scheduler: &Scheduler,
    dist: &GlobalTimeDist,
    n: usize,
    n_start: usize,
    rng: &mut R,
) -> Result<TrainingTimes> {
    if n == 0 {
        return Err(Error::invalid("training target must have at least one frame"));
    }
    let offsets = scheduler.sample_offsets(n, n_start, rng)?;
    let tau_max = offsets.iter().copied().fold(0.0, f64::max) + 1.0;
    loop {
        let tau_g = dist.sample(tau_max, rng);
        let times = TrainingTimes::from_offsets(offsets.clone(), tau_g)?;
        if times.n_flowing() > 0 {
            return Ok(times);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson quadrature, independent of the closed form.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn hazard_examples() {
        let lin = Scheduler::Linear;
        assert_eq!(lin.hazard(0.5).unwrap(), 2.0);
        assert_eq!(lin.hazard(0.0).unwrap(), 1.0);
        let p2 = Scheduler::Power(2.0);
        assert!((p2.hazard(0.5).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        // finite-difference cross-check of kappa_dot for Power(2)
        let d = 1e-6;
        let fd = (p2.kappa(0.5 + d) - p2.kappa(0.5 - d)) / (2.0 * d);
        assert!((fd / (1.0 - p2.kappa(0.5)) - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn hazard_support_and_divergence() {
        assert_eq!(Scheduler::Linear.hazard(-0.2).unwrap(), 0.0);
        assert!(matches!(
            Scheduler::Linear.hazard(1.0),
            Err(Error::Divergent(_))
        ));
        assert!(Scheduler::Linear.hazard(f64::NAN).is_err());
        assert!(Scheduler::Power(0.5).hazard(0.0).is_err());
    }

    #[test]
    fn integrated_hazard_matches_quadrature() {
        // oracle values from Simpson's rule on the hazard itself
        let lin = Scheduler::Linear;
        let q = simpson(|s| lin.hazard(s).unwrap(), 0.5, 0.75, 2000);
        assert!((q - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((lin.integrated_hazard(0.5, 0.25).unwrap() - q).abs() < 1e-9);

        let q = simpson(|s| lin.hazard(s).unwrap(), 0.0, 0.5, 2000);
        assert!((lin.integrated_hazard(0.0, 0.5).unwrap() - q).abs() < 1e-9);

        let p3 = Scheduler::Power(3.0);
        let q = simpson(|s| p3.hazard(s).unwrap(), 0.2, 0.9, 4000);
        assert!((p3.integrated_hazard(0.2, 0.7).unwrap() - q).abs() < 1e-8);

        assert_eq!(lin.integrated_hazard(0.3, 0.0).unwrap(), 0.0);
        assert!(lin.integrated_hazard(0.5, 0.5).is_err());
    }

    #[test]
    fn kappa_inverse_roundtrip() {
        for s in [Scheduler::Linear, Scheduler::Power(2.0), Scheduler::Power(0.5)] {
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                assert!((s.kappa_inv(s.kappa(t)) - t).abs() < 1e-12);
            }
        }
        assert_eq!(Scheduler::Power(2.0).kappa_inv(0.25), 0.5);
    }

    #[test]
    fn offsets_start_frames_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            Scheduler::Linear.sample_offsets(3, 3, &mut rng).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert!(Scheduler::Linear.sample_offsets(2, 3, &mut rng).is_err());
        let off = Scheduler::Linear.sample_offsets(50, 2, &mut rng).unwrap();
        assert_eq!(&off[..2], &[0.0, 0.0]);
        assert!(off[2..].iter().all(|o| (0.0..1.0).contains(o)));
    }

    #[test]
    fn linear_offsets_follow_kappa_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut off = Scheduler::Linear.sample_offsets(n, 0, &mut rng).unwrap();
        off.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = off
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = (x - (i + 1) as f64 / n as f64).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        // Kolmogorov limit: P(sqrt(n) D > 1.63) ~ 1%; 3 sigma band is ~1.95/sqrt(n)
        assert!(d * (n as f64).sqrt() < 1.95, "KS statistic {d}");
    }

    #[test]
    fn training_times_hand_trace() {
        let tt = TrainingTimes::from_offsets(vec![0.0, 0.4], 1.2).unwrap();
        assert!((tt.tau[0] - 1.2).abs() < 1e-15 && (tt.tau[1] - 0.8).abs() < 1e-15);
        assert_eq!(tt.states, vec![FrameState::Terminal, FrameState::Flowing]);
        assert!((tt.tau_max - 1.4).abs() < 1e-15);

        let tt = TrainingTimes::from_offsets(vec![0.0, 0.3, 0.7], 0.0).unwrap();
        assert_eq!(
            tt.states,
            vec![FrameState::Flowing, FrameState::Deleted, FrameState::Deleted]
        );
        assert_eq!(tt.t[0], 0.0);
    }

    #[test]
    fn sampled_training_times_always_have_a_flowing_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dist in [GlobalTimeDist::Uniform, GlobalTimeDist::default()] {
            for _ in 0..5000 {
                let n = rng.random_range(1..12);
                let tt =
                    sample_training_times(&Scheduler::Linear, &dist, n, 1, &mut rng).unwrap();
                assert!(tt.n_flowing() >= 1);
                assert!(tt.tau_g >= 0.0 && tt.tau_g <= tt.tau_max);
                for (tau, off) in tt.tau.iter().zip(&tt.offsets) {
                    assert!((tau - (tt.tau_g - off)).abs() < 1e-15);
                }
                for (t, tau) in tt.t.iter().zip(&tt.tau) {
                    assert!(*t <= tt.t_g() + 1e-15 || *tau < 0.0);
                }
            }
        }
        // all-starting case: tau_max = 1
        let tt = sample_training_times(
            &Scheduler::Linear,
            &GlobalTimeDist::Uniform,
            4,
            4,
            &mut rng,
        )
        .unwrap();
        assert_eq!(tt.tau_max, 1.0);
    }
}
