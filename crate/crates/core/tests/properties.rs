use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowception::flops::analytic_costs;
use flowception::loss::{pending_counts, poisson_nll};
use flowception::model::{Architecture, ConditionalOracle, FieldModel, ReferenceNet};
use flowception::sampler::{generate, SamplerConfig, Thinning};
use flowception::schedule::{sample_training_times, GlobalTimeDist, Scheduler};
use flowception::seq::{AugmentedSeq, Frame, FrameSeq, FrameShape, FrameState};
use flowception::toyset::{decode_dataset, encode_dataset, mixture_catalog};
use flowception::ContextSpec;

const S: FrameShape = FrameShape::new(1, 2, 1);

fn frames(vals: &[f32]) -> Vec<Frame> {
    vals.iter()
        .map(|&v| Frame::new(S, vec![v, -v]).unwrap())
        .collect()
}

fn scheduler(p: Option<f64>) -> Scheduler {
    p.map_or(Scheduler::Linear, |p| Scheduler::power(p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn strip_ignores_blanks(vals in prop::collection::vec(-1f32..1.0, 1..8), blanks in prop::collection::vec(0usize..9, 0..6)) {
        let seq = FrameSeq::new(S, frames(&vals)).unwrap();
        let mut slots: Vec<Option<Frame>> = seq.frames().iter().cloned().map(Some).collect();
        for b in blanks {
            let at = b.min(slots.len());
            slots.insert(at, None);
        }
        let (stripped, alignment) = AugmentedSeq::new(S, slots.clone()).unwrap().strip();
        prop_assert_eq!(&stripped, &seq);
        for (j, &i) in alignment.iter().enumerate() {
            prop_assert_eq!(slots[i].as_ref(), Some(&seq.frames()[j]));
        }
    }

    #[test]
    fn ins_then_remove_is_identity(vals in prop::collection::vec(-1f32..1.0, 1..8), slot in 1usize..9, v in -1f32..1.0) {
        let seq = FrameSeq::new(S, frames(&vals)).unwrap();
        let slot = slot.min(seq.len());
        let f = frames(&[v]).remove(0);
        let grown = seq.ins(slot, f.clone()).unwrap();
        prop_assert_eq!(grown.len(), seq.len() + 1);
        let (back, removed) = grown.remove(slot).unwrap();
        prop_assert_eq!(back, seq);
        prop_assert_eq!(removed, f);
    }

    #[test]
    fn training_times_partition(n in 1usize..40, n_start in 1usize..4, p in prop::option::of(0.5f64..4.0), seed: u64) {
        let n_start = n_start.min(n);
        let s = scheduler(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tt = sample_training_times(&s, &GlobalTimeDist::default(), n, n_start, &mut rng).unwrap();
        let visible = tt.visible_mask.iter().filter(|v| **v).count();
        let flowing = tt.states.iter().filter(|s| **s == FrameState::Flowing).count();
        let terminal = tt.states.iter().filter(|s| **s == FrameState::Terminal).count();
        prop_assert_eq!(flowing + terminal, visible);
        prop_assert!(flowing >= 1);
        for (i, &t) in tt.t.iter().enumerate() {
            prop_assert!(t <= tt.t_g() + 1e-12);
            if i < n_start {
                prop_assert!(tt.visible_mask[i]);
            }
        }
        let counts = pending_counts(&tt.visible_mask).unwrap();
        prop_assert_eq!(counts.len(), visible);
        prop_assert_eq!(counts.total() as usize, n - visible);
    }

    #[test]
    fn hazard_is_finite_difference_of_kappa(t in 0.05f64..0.9, p in prop::option::of(0.5f64..4.0)) {
        let s = scheduler(p);
        let d = 1e-6;
        let fd = (s.kappa(t + d) - s.kappa(t)) / ((1.0 - s.kappa(t)) * d);
        let h = s.hazard(t).unwrap();
        prop_assert!(((fd - h) / h.max(1e-300)).abs() < 1e-4 || (fd - h).abs() < 1e-9, "t={} fd={} h={}", t, fd, h);
    }

    #[test]
    fn poisson_nll_is_convex_with_minimum_at_count(k in 1u32..30, lam in 0.05f64..40.0) {
        let e = 1e-3 * lam;
        let f = |l: f64| poisson_nll(l, k).unwrap();
        prop_assert!(f(lam + e) + f(lam - e) - 2.0 * f(lam) > 0.0);
        prop_assert!(f(k as f64) <= f(lam) + 1e-12);
    }

    #[test]
    fn bregman_and_poisson_share_minimizer(u in 0.01f64..50.0) {
        // d/dl of l - u ln l, and of u ln(u/l) - u + l, found by bisection independently
        let bisect = |g: &dyn Fn(f64) -> f64| {
            let (mut lo, mut hi) = (1e-9, 1e3);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 { hi = mid } else { lo = mid }
            }
            0.5 * (lo + hi)
        };
        let poisson = bisect(&|l| 1.0 - u / l);
        let bregman = bisect(&|l| -u / l + 1.0);
        let fd = |l: f64| {
            let d = |x: f64| u * (u / x).ln() - u + x;
            (d(l + 1e-7) - d(l - 1e-7)) / 2e-7
        };
        prop_assert!((poisson - bregman).abs() < 1e-8);
        prop_assert!((poisson - u).abs() < 1e-8 * u.max(1.0));
        prop_assert!(fd(bregman).abs() < 1e-5);
    }

    #[test]
    fn ar_sum_bound(n in 1u64..400, l in 1u64..64, t in 1u64..100) {
        let r = analytic_costs(n, l, t, t, 2.0).unwrap();
        let bound = t as f64 * (l * l) as f64 * ((n + 1) as f64).powi(3) / 3.0;
        prop_assert!(r.ar_nocache <= bound);
        prop_assert!(r.ar_cache <= r.ar_nocache);
    }

    #[test]
    fn dataset_roundtrip(lens in prop::collection::vec(1usize..6, 1..5), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let videos: Vec<FrameSeq> = lens
            .iter()
            .map(|&n| FrameSeq::new(S, (0..n).map(|_| Frame::noise(S, &mut rng)).collect()).unwrap())
            .collect();
        let bytes = encode_dataset(&videos).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &videos);
        prop_assert!(back.iter().flat_map(|v| v.frames()).all(|f| f.values().iter().all(|x| x.is_finite())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn oracle_runs_are_monotone_bounded_and_deterministic(
        which in 0usize..4,
        h in prop::sample::select(vec![0.5, 0.25, 0.1, 0.05]),
        poisson: bool,
        seed: u64,
    ) {
        let target = mixture_catalog()[which].clone();
        let s = Scheduler::Linear;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let oracle = ConditionalOracle::sample(target.clone(), 1, &s, &mut rng).unwrap();
        let cfg = SamplerConfig {
            h,
            seed,
            thinning: if poisson { Thinning::Poisson } else { Thinning::Bernoulli },
            ..SamplerConfig::default()
        };
        let (out, trace) = generate(&oracle, target.shape(), &cfg, &ContextSpec::none()).unwrap();
        prop_assert!(trace.step_count() <= cfg.step_bound());
        let mut prev_len = 1;
        let mut prev_sum = 0.0;
        for st in &trace.steps {
            prop_assert!(st.n_visible >= prev_len);
            prop_assert!(st.t_after.iter().all(|t| (0.0..=1.0).contains(t)));
            let sum: f64 = st.t_before.iter().sum();
            prop_assert!(sum >= prev_sum - 1e-12);
            prev_sum = st.t_after.iter().sum();
            prop_assert!(prev_sum >= sum - 1e-12);
            prev_len = st.n_visible;
        }
        if !poisson {
            prop_assert_eq!(out.len(), target.len());
        }
        let (again, trace2) = generate(&oracle, target.shape(), &cfg, &ContextSpec::none()).unwrap();
        prop_assert_eq!(again, out);
        prop_assert_eq!(trace2, trace);
    }

    #[test]
    fn rates_positive_and_output_tracks_length(seed in 0u64..1000, m in 1usize..6, extra: bool) {
        let net = ReferenceNet::new(Architecture::toy().with_frame(S), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fs: Vec<Frame> = (0..m).map(|_| Frame::noise(S, &mut rng)).collect();
        let mut t: Vec<f64> = (0..m).map(|i| i as f64 / m as f64).collect();
        if extra {
            fs.push(Frame::filled(S, 0.5));
            t.push(1.0);
        }
        let x = FrameSeq::new(S, fs).unwrap();
        let out = net.eval(&x, &t, &ContextSpec::none(), false).unwrap();
        prop_assert_eq!(out.v.len(), x.len());
        prop_assert_eq!(out.lambda.len(), x.len());
        prop_assert!(out.lambda.iter().all(|l| *l > 0.0 && l.is_finite()));
    }
}
