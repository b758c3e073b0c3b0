//! Exact conditional field for a single known target sequence.
//!
//! The oracle infers which target frame every visible frame stands for, then
//! reports the pending-count rate of each slot and the straight-line velocity
//! towards the aligned target frame. Alignment is recovered from the
//! per-frame times alone: older frames carry larger times, starting frames are
//! the oldest, and a frame inserted into a gap takes the pending target frame
//! with the smallest reveal offset. Because offsets are i.i.d., that choice is
//! uniform over the gap, matching independent per-frame reveal times.

use rand::Rng;

use super::{check_inputs, ContextSpec, FieldModel, FieldOutput};
use crate::error::{Error, Result};
use crate::loss::PendingCounts;
use crate::schedule::Scheduler;
use crate::seq::{Frame, FrameSeq};

#[derive(Debug, Clone)]
pub struct ConditionalOracle {
    target: FrameSeq,
    n_start: usize,
    offsets: Vec<f64>,
}

impl ConditionalOracle {
    pub fn new(target: FrameSeq, n_start: usize, offsets: Vec<f64>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::invalid("oracle target is empty"));
        }
        if n_start == 0 || n_start > target.len() {
            return Err(Error::invalid(format!(
                "oracle needs 1 <= n_start <= {}, got {n_start}",
                target.len()
            )));
        }
        if offsets.len() != target.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} offsets", target.len()),
                got: format!("{} offsets", offsets.len()),
            });
        }
        Ok(Self {
            target,
            n_start,
            offsets,
        })
    }

    /// Draws fresh reveal offsets from the scheduler.
    pub fn sample<R: Rng + ?Sized>(
        target: FrameSeq,
        n_start: usize,
        scheduler: &Scheduler,
        rng: &mut R,
    ) -> Result<Self> {
        let offsets = scheduler.sample_offsets(target.len(), n_start.min(target.len()), rng)?;
        Self::new(target, n_start, offsets)
    }

    pub fn target(&self) -> &FrameSeq {
        &self.target
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Target index of each visible frame, non-decreasing in position.
    ///
    /// Surplus frames (more frames in a gap than pending targets) repeat the
    /// alignment of their left neighbour.
    pub fn alignment(&self, t: &[f64]) -> Vec<usize> {
        let n = self.target.len();
        let m = t.len();
        if m == n {
            return (0..n).collect();
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| t[b].total_cmp(&t[a]).then(a.cmp(&b)));

        let mut align: Vec<Option<usize>> = vec![None; m];
        let mut first = true;
        let mut start = 0;
        while start < m {
            let mut end = start + 1;
            while end < m && t[order[end]] == t[order[start]] {
                end += 1;
            }
            let mut group: Vec<usize> = order[start..end].to_vec();
            group.sort_unstable();
            if first {
                let s = self.n_start.min(group.len());
                for (r, &pos) in group[..s].iter().enumerate() {
                    align[pos] = Some(r);
                }
                group.drain(..s);
                first = false;
            }
            self.assign_group(&group, &mut align);
            start = end;
        }
        align.into_iter().map(|a| a.unwrap_or(0)).collect()
    }

    fn assign_group(&self, group: &[usize], align: &mut [Option<usize>]) {
        if group.is_empty() {
            return;
        }
        let n = self.target.len();
        let mut left: Option<usize> = None;
        let mut run: Vec<usize> = Vec::new();
        let mut g = 0;
        for pos in 0..align.len() {
            if let Some(a) = align[pos] {
                self.fill_run(left, a, &run, align);
                run.clear();
                left = Some(a);
            } else if g < group.len() && group[g] == pos {
                run.push(pos);
                g += 1;
            }
        }
        self.fill_run(left, n, &run, align);
    }

    fn fill_run(&self, left: Option<usize>, right: usize, run: &[usize], align: &mut [Option<usize>]) {
        if run.is_empty() {
            return;
        }
        let lo = left.map_or(0, |l| l + 1);
        let mut pending: Vec<usize> = (lo..right.max(lo)).collect();
        pending.sort_by(|&a, &b| self.offsets[a].total_cmp(&self.offsets[b]).then(a.cmp(&b)));
        pending.truncate(run.len());
        pending.sort_unstable();
        let mut last = left.unwrap_or(0);
        for (i, &pos) in run.iter().enumerate() {
            if let Some(&a) = pending.get(i) {
                last = a;
            }
            align[pos] = Some(last);
        }
    }

    /// Pending count of each visible slot under the inferred alignment.
    pub fn pending(&self, alignment: &[usize]) -> PendingCounts {
        let n = self.target.len();
        PendingCounts(
            (0..alignment.len())
                .map(|j| {
                    let next = alignment.get(j + 1).copied().unwrap_or(n);
                    next.saturating_sub(alignment[j] + 1) as u32
                })
                .collect(),
        )
    }
}

impl FieldModel for ConditionalOracle {
    fn eval(
        &self,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        _cond_dropped: bool,
    ) -> Result<FieldOutput> {
        check_inputs(x, t, ctx)?;
        if x.shape() != self.target.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.target.shape().to_string(),
                got: x.shape().to_string(),
            });
        }
        let alignment = self.alignment(t);
        let lambda = self.pending(&alignment).0.iter().map(|&k| k as f64).collect();
        let v = x
            .frames()
            .iter()
            .zip(t)
            .zip(&alignment)
            .map(|((frame, &ti), &a)| {
                let target = &self.target.frames()[a];
                if ti >= 1.0 {
                    return Ok(Frame::zeros(frame.shape()));
                }
                // the straight path through the current state hits the target at t = 1
                let scale = 1.0 / (1.0 - ti);
                let values = frame
                    .values()
                    .iter()
                    .zip(target.values())
                    .map(|(xv, tv)| ((*tv as f64 - *xv as f64) * scale) as f32)
                    .collect();
                Frame::new(frame.shape(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldOutput { v, lambda })
    }
}

/// The full insertion intensity `hazard(t_g) * K_j` per slot.
pub fn oracle_rate_scaled(counts: &PendingCounts, t_g: f64, scheduler: &Scheduler) -> Result<Vec<f64>> {
    let rho = scheduler.hazard(t_g)?;
    Ok(counts.as_slice().iter().map(|&k| rho * k as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::FrameShape;

    const S: FrameShape = FrameShape::new(1, 1, 1);

    fn seq(vals: &[f32]) -> FrameSeq {
        FrameSeq::new(S, vals.iter().map(|v| Frame::filled(S, *v)).collect()).unwrap()
    }

    #[test]
    fn pending_on_first_slot() {
        // frames 2,3 (1-based) pending in slot 1; frame 4 revealed first
        let target = seq(&[1.0, 2.0, 3.0, 4.0]);
        let oracle = ConditionalOracle::new(target, 1, vec![0.0, 0.7, 0.8, 0.3]).unwrap();
        let x1 = [1.0f64, 4.0];
        let x0 = [-0.5f64, 0.25];
        let t = [0.5, 0.2];
        let x = seq(&[
            (t[0] * x1[0] + (1.0 - t[0]) * x0[0]) as f32,
            (t[1] * x1[1] + (1.0 - t[1]) * x0[1]) as f32,
        ]);
        let out = oracle.eval(&x, &t, &ContextSpec::none(), false).unwrap();
        assert_eq!(out.lambda, vec![2.0, 0.0]);
        for i in 0..2 {
            assert!((out.v[i].values()[0] as f64 - (x1[i] - x0[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn full_sequence_is_identity_aligned() {
        let oracle = ConditionalOracle::new(seq(&[1.0, 2.0, 3.0]), 1, vec![0.0, 0.5, 0.1]).unwrap();
        assert_eq!(oracle.alignment(&[0.3, 0.1, 0.0]), vec![0, 1, 2]);
        let k = oracle.pending(&[0, 1, 2]);
        assert_eq!(k.0, vec![0, 0, 0]);
    }

    #[test]
    fn same_step_insertions_in_one_gap_take_smallest_offsets() {
        let target = seq(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let oracle = ConditionalOracle::new(target, 1, vec![0.0, 0.9, 0.2, 0.8, 0.1]).unwrap();
        // starting frame plus two frames inserted together
        let a = oracle.alignment(&[0.5, 0.1, 0.1]);
        assert_eq!(a, vec![0, 2, 4]);
        assert_eq!(oracle.pending(&a).0, vec![1, 1, 0]);
    }

    #[test]
    fn surplus_frames_get_zero_rate() {
        let oracle = ConditionalOracle::new(seq(&[0.0, 1.0]), 1, vec![0.0, 0.5]).unwrap();
        let a = oracle.alignment(&[0.6, 0.1, 0.1]);
        assert_eq!(a, vec![0, 1, 1]);
        assert_eq!(oracle.pending(&a).0, vec![0, 0, 0]);
    }

    #[test]
    fn scaled_rates() {
        let lin = Scheduler::Linear;
        assert_eq!(
            oracle_rate_scaled(&PendingCounts(vec![2, 1]), 0.5, &lin).unwrap(),
            vec![4.0, 2.0]
        );
        assert_eq!(
            oracle_rate_scaled(&PendingCounts(vec![0, 0]), 0.3, &lin).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            oracle_rate_scaled(&PendingCounts(vec![3]), 0.0, &lin).unwrap(),
            vec![3.0]
        );
        assert!(oracle_rate_scaled(&PendingCounts(vec![1]), 1.0, &lin).is_err());
    }
}
