//! Poisson insertion loss, flow-matching velocity loss, and pending-count
//! targets.

use crate::error::{Error, Result};
use crate::model::FieldOutput;
use crate::schedule::Scheduler;
use crate::seq::Frame;
use crate::trainer::TrainingSnapshot;

/// Hidden-frame counts per visible slot: `k[j]` frames wait between visible
/// frame `j` and visible frame `j + 1` (or the end).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingCounts(pub Vec<u32>);

impl PendingCounts {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&k| k as u64).sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// Counts the hidden runs to the right of each visible frame.
pub fn pending_counts(visible_mask: &[bool]) -> Result<PendingCounts> {
    match visible_mask.first() {
        Some(true) => {}
        Some(false) => {
            return Err(Error::invalid(
                "first frame must be visible: masked prefix has no left neighbour",
            ))
        }
        None => return Ok(PendingCounts(Vec::new())),
    }
    let mut counts = Vec::new();
    for &visible in visible_mask {
        if visible {
            counts.push(0);
        } else {
            *counts.last_mut().expect("first entry is visible") += 1;
        }
    }
    Ok(PendingCounts(counts))
}

/// One slot of the Poisson NLL, `lambda - k ln lambda`, with `0 ln 0 := 0`.
pub fn poisson_nll(lambda: f64, k: u32) -> Result<f64> {
    if lambda.is_nan() {
        return Err(Error::NotANumber("insertion_loss"));
    }
    if k == 0 {
        if lambda < 0.0 {
            return Err(Error::invalid(format!("negative rate {lambda}")));
        }
        return Ok(lambda);
    }
    if lambda <= 0.0 {
        return Err(Error::invalid(format!(
            "rate {lambda} must be positive where the pending count is {k}"
        )));
    }
    Ok(lambda - k as f64 * lambda.ln())
}

/// `sum_j lambda_j - k_j ln lambda_j`, without the hazard prefactor.
pub fn insertion_loss(lambda: &[f64], k: &PendingCounts) -> Result<f64> {
    if lambda.len() != k.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rates", k.len()),
            got: format!("{} rates", lambda.len()),
        });
    }
    let mut acc = 0.0f64;
    for (&l, &kj) in lambda.iter().zip(k.as_slice()) {
        acc += poisson_nll(l, kj)?;
    }
    Ok(acc)
}

/// Mean over all active frames of `||v_pred - (x1 - x0)||^2`.
///
/// Frames from several sequences can be concatenated: every active frame
/// contributes equally, regardless of which sequence it came from.
pub fn velocity_loss(v_pred: &[Frame], x1: &[Frame], x0: &[Frame], active: &[bool]) -> Result<f64> {
    let n = v_pred.len();
    if x1.len() != n || x0.len() != n || active.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} frames everywhere"),
            got: format!("x1={}, x0={}, mask={}", x1.len(), x0.len(), active.len()),
        });
    }
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for i in (0..n).filter(|&i| active[i]) {
        let (v, a, b) = (&v_pred[i], &x1[i], &x0[i]);
        if v.shape() != a.shape() || a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                expected: v.shape().to_string(),
                got: format!("{} / {}", a.shape(), b.shape()),
            });
        }
        for ((pv, pa), pb) in v.values().iter().zip(a.values()).zip(b.values()) {
            let r = *pv as f64 - (*pa as f64 - *pb as f64);
            acc += r * r;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoActiveFrames);
    }
    Ok(acc / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_ins: f64,
    /// Multiply the insertion term by the hazard at the snapshot's global time.
    pub elbo_weighted: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ins: 1.0,
            elbo_weighted: false,
        }
    }
}

impl LossWeights {
    /// Scale applied to a snapshot's insertion term.
    pub fn insertion_scale(&self, scheduler: &Scheduler, t_g: f64) -> f64 {
        if self.elbo_weighted {
            // hazard is unbounded at t_g = 1; pending counts are zero there anyway
            self.w_ins * scheduler.hazard(t_g.min(0.999)).unwrap_or(0.0)
        } else {
            self.w_ins
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub insertion_nll: f64,
    pub velocity_mse: f64,
    pub active_frame_count: usize,
    pub total: f64,
}

/// Loss of a single snapshot: insertion NLL summed over slots plus the
/// velocity error averaged over its flowing frames.
pub fn total_loss(
    out: &FieldOutput,
    snap: &TrainingSnapshot,
    scheduler: &Scheduler,
    weights: &LossWeights,
) -> Result<LossReport> {
    let m = snap.x.len();
    if out.v.len() != m || out.lambda.len() != m {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} outputs"),
            got: format!("{} velocities, {} rates", out.v.len(), out.lambda.len()),
        });
    }
    let insertion_nll = insertion_loss(&out.lambda, &snap.counts)?;
    let zeros: Vec<Frame> = snap.x.frames().iter().map(|f| Frame::zeros(f.shape())).collect();
    let velocity_mse = velocity_loss(&out.v, &snap.velocity_target, &zeros, &snap.active)?;
    let active_frame_count = snap.active.iter().filter(|a| **a).count();
    let total = weights.insertion_scale(scheduler, snap.t_g) * insertion_nll + velocity_mse;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("total loss {total}")));
    }
    Ok(LossReport {
        insertion_nll,
        velocity_mse,
        active_frame_count,
        total,
    })
}
