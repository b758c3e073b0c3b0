//! Length histograms, total-variation distance and run summaries.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ContextSpec;
use crate::sampler::SampleTrace;
use crate::seq::FrameSeq;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LengthHistogram {
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
}

impl LengthHistogram {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut h = Self::default();
        for l in lengths {
            *h.counts.entry(l).or_default() += 1;
            h.total += 1;
        }
        h
    }

    pub fn from_videos(videos: &[FrameSeq]) -> Self {
        Self::from_lengths(videos.iter().map(|v| v.len()))
    }

    pub fn prob(&self, len: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&len).unwrap_or(&0) as f64 / self.total as f64
    }

    /// `0.5 * sum |p - q|`.
    pub fn tv(&self, other: &LengthHistogram) -> Result<f64> {
        if self.total == 0 || other.total == 0 {
            return Err(Error::invalid("total variation of an empty histogram"));
        }
        let keys: std::collections::BTreeSet<usize> =
            self.counts.keys().chain(other.counts.keys()).copied().collect();
        Ok(0.5 * keys.iter().map(|&k| (self.prob(k) - other.prob(k)).abs()).sum::<f64>())
    }

    /// Mass within `tol` frames of any of `modes`.
    pub fn mass_near(&self, modes: &[usize], tol: usize) -> f64 {
        self.counts
            .keys()
            .filter(|&&l| modes.iter().any(|&m| l.abs_diff(m) <= tol))
            .map(|&l| self.prob(l))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(&l, &c)| l as f64 * c as f64).sum::<f64>() / self.total.max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self
            .counts
            .iter()
            .map(|(&l, &c)| (l as f64 - m).powi(2) * c as f64)
            .sum::<f64>()
            / self.total.max(1) as f64;
        var.sqrt()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("length,count,prob\n");
        for (&l, &c) in &self.counts {
            s.push_str(&format!("{l},{c},{:.6}\n", self.prob(l)));
        }
        s
    }
}

/// True when every context frame reappears bit-identical, in order, at the
/// positions recorded in the trace.
pub fn context_fidelity(output: &FrameSeq, trace: &SampleTrace, ctx: &ContextSpec) -> bool {
    if trace.context_positions.len() != ctx.len() {
        return false;
    }
    if trace.context_positions.windows(2).any(|w| w[0] >= w[1]) {
        return false;
    }
    ctx.frames().iter().zip(&trace.context_positions).all(|(c, &pos)| {
        output.frames().get(pos).is_some_and(|f| {
            f.values()
                .iter()
                .zip(c.frame.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub length_tv: f64,
    pub mode_mass: f64,
    pub mean_length: f64,
    pub std_length: f64,
    pub context_fidelity: Option<bool>,
    pub step_counts: Vec<u64>,
    pub generated: LengthHistogram,
    pub reference: LengthHistogram,
}

impl EvalReport {
    pub fn new(generated: &[FrameSeq], reference: &[FrameSeq], modes: &[usize]) -> Result<Self> {
        if generated.is_empty() || reference.is_empty() {
            return Err(Error::invalid("evaluation needs non-empty generated and reference sets"));
        }
        let g = LengthHistogram::from_videos(generated);
        let r = LengthHistogram::from_videos(reference);
        Ok(Self {
            length_tv: g.tv(&r)?,
            mode_mass: g.mass_near(modes, 1),
            mean_length: g.mean(),
            std_length: g.std(),
            context_fidelity: None,
            step_counts: Vec::new(),
            generated: g,
            reference: r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_extremes() {
        let a = LengthHistogram::from_lengths([1, 2, 2, 3]);
        assert_eq!(a.tv(&a).unwrap(), 0.0);
        let b = LengthHistogram::from_lengths([7, 8]);
        assert_eq!(a.tv(&b).unwrap(), 1.0);
        assert!(a.tv(&LengthHistogram::default()).is_err());
    }

    #[test]
    fn mode_mass_and_moments() {
        let h = LengthHistogram::from_lengths([14, 15, 17, 30]);
        assert_eq!(h.mass_near(&[15, 30], 1), 0.75);
        assert_eq!(h.mean(), 19.0);
    }
}
