//! Attention-score cost accounting. Only the quadratic score term is
//! counted; projections and MLPs are ignored.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::SampleTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsParams {
    pub n: u64,
    pub l: u64,
    pub t_full: u64,
    pub t_ar: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsReport {
    pub params: FlopsParams,
    pub full_seq: f64,
    /// Exact sum `T_AR L^2 sum j^2`.
    pub ar_nocache: f64,
    /// Exact sum `T_AR L^2 sum j`.
    pub ar_cache: f64,
    /// `(n / 3) T_AR (nL)^2`.
    pub ar_nocache_bound: f64,
    /// `T_AR (nL)^2 / 2`.
    pub ar_cache_bound: f64,
    pub flowception_analytic: f64,
    pub flowception_empirical: Option<f64>,
}

pub fn analytic_costs(n: u64, l: u64, t_full: u64, t_ar: u64, alpha: f64) -> Result<FlopsReport> {
    if n == 0 || l == 0 || t_full == 0 || t_ar == 0 || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("flops parameters must be positive"));
    }
    let (nf, lf) = (n as f64, l as f64);
    let tokens2 = (nf * lf).powi(2);
    let sum_j = nf * (nf + 1.0) / 2.0;
    let sum_j2 = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 6.0;
    let full_seq = t_full as f64 * tokens2;
    Ok(FlopsReport {
        params: FlopsParams {
            n,
            l,
            t_full,
            t_ar,
            alpha,
        },
        full_seq,
        ar_nocache: t_ar as f64 * lf * lf * sum_j2,
        ar_cache: t_ar as f64 * lf * lf * sum_j,
        ar_nocache_bound: nf / 3.0 * t_ar as f64 * tokens2,
        ar_cache_bound: 0.5 * t_ar as f64 * tokens2,
        flowception_analytic: alpha / 3.0 * full_seq,
        flowception_empirical: None,
    })
}

/// `sum over steps of (n_active * L)^2`.
pub fn empirical_cost(trace: &SampleTrace, l: u64) -> f64 {
    trace
        .steps
        .iter()
        .map(|s| (s.n_active as f64 * l as f64).powi(2))
        .sum()
}

impl FlopsReport {
    pub fn with_empirical(mut self, cost: f64) -> Self {
        self.flowception_empirical = Some(cost);
        self
    }

    pub fn table(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n={} L={} T_full={} T_AR={} alpha={}",
            p.n, p.l, p.t_full, p.t_ar, p.alpha
        );
        let _ = writeln!(s, "{:<22}{:>16}{:>16}", "method", "flops", "bound");
        let _ = writeln!(s, "{:<22}{:>16.1}{:>16}", "full-sequence", self.full_seq, "-");
        let _ = writeln!(
            s,
            "{:<22}{:>16.1}{:>16.1}",
            "autoregressive", self.ar_nocache, self.ar_nocache_bound
        );
        let _ = writeln!(
            s,
            "{:<22}{:>16.1}{:>16.1}",
            "autoregressive+cache", self.ar_cache, self.ar_cache_bound
        );
        let _ = writeln!(s, "{:<22}{:>16.1}{:>16}", "flowception", self.flowception_analytic, "-");
        if let Some(e) = self.flowception_empirical {
            let _ = writeln!(s, "{:<22}{:>16.1}{:>16}", "flowception (trace)", e, "-");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let r = analytic_costs(10, 4, 8, 8, 2.0).unwrap();
        assert_eq!(r.full_seq, 12800.0);
        assert_eq!(r.ar_nocache, 49280.0);
        assert_eq!(r.ar_cache, 7040.0);
        assert!((r.flowception_analytic - 25600.0 / 3.0).abs() < 1e-9);
        assert!((r.flowception_analytic / r.full_seq - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_frame() {
        let r = analytic_costs(1, 5, 3, 7, 2.0).unwrap();
        assert_eq!(r.full_seq, 75.0);
        assert_eq!(r.ar_cache, 175.0);
    }

    #[test]
    fn empty_trace_costs_nothing() {
        assert_eq!(empirical_cost(&SampleTrace::default(), 16), 0.0);
    }
}
