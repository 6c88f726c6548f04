use autograd::Tensor;
use cvgan::argen::{plan_hi_schedule, HistoryBuffer};
use cvgan::container::Container;
use cvgan::dataset::{build_windows, compute_hi, quantize_hi, synthesize_lifecycle, HiMode, SyntheticSpec};
use cvgan::losses::{compose_config, LossConfig};
use cvgan::metrics::{fid_features, mmd_vectors, score_term};
use cvgan::trainer::TrainPlan;
use proptest::prelude::*;

fn point_set(max_len: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, dim), 2..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn windows_number_n_minus_k(n in 3usize..60, fpt_frac in 0.05..0.9f64, k in 1usize..20, seed in any::<u64>()) {
        prop_assume!(k < n);
        let fpt = ((n as f64 * fpt_frac) as usize).clamp(1, n - 2);
        let spec = SyntheticSpec {
            bearing_id: "p".into(),
            n,
            fpt_index: fpt,
            base_mean: [0.3, 0.6],
            noise_scale: 0.1,
            growth_exponent: 1.5,
            seed,
        };
        let lc = synthesize_lifecycle(&spec, 16).unwrap();
        let w = build_windows(&lc, k).unwrap();
        prop_assert_eq!(w.len(), n - k);
        for (i, s) in w.iter().enumerate() {
            prop_assert_eq!(&s.x, &lc.series[i + k]);
            prop_assert_eq!(&s.x2[..], &lc.series[i..i + k]);
            prop_assert_eq!(s.hi_class, lc.hi_class[i + k]);
        }
    }

    #[test]
    fn piecewise_hi_is_a_monotone_ramp(n in 3usize..400, fpt_frac in 0.0..1.0f64) {
        let fpt = ((n as f64 * fpt_frac) as usize).min(n - 2);
        let hi = compute_hi(n, fpt, HiMode::Piecewise).unwrap();
        prop_assert!(hi[..=fpt].iter().all(|&h| h == 1.0));
        prop_assert_eq!(hi[n - 1], 0.0);
        prop_assert!(hi.windows(2).all(|w| w[1] <= w[0]));
        let classes: Vec<usize> = hi.iter().map(|&h| quantize_hi(h).unwrap()).collect();
        prop_assert!(classes.iter().all(|&c| c < 32));
        prop_assert!(classes.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn schedules_hold_their_invariants(length in 3usize..1500, frac in 0.0..1.0f64) {
        let fpt_step = 1 + ((length - 2) as f64 * frac) as usize;
        let s = plan_hi_schedule(length, fpt_step).unwrap();
        prop_assert_eq!(s.classes.len(), length);
        prop_assert!(s.classes[..fpt_step].iter().all(|&c| c == 31));
        prop_assert_eq!(s.classes[length - 1], 0);
        prop_assert!(s.classes.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mmd_is_symmetric_nonnegative_and_zero_on_self(a in point_set(12, 3), b in point_set(12, 3)) {
        let ab = mmd_vectors(&a, &b, 1.0).unwrap();
        let ba = mmd_vectors(&b, &a, 1.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab > -1e-12);
        prop_assert!(mmd_vectors(&a, &a, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fid_is_symmetric_and_translation_invariant(a in point_set(16, 3), b in point_set(16, 3), shift in -3.0..3.0f64) {
        let ab = fid_features(&a, &b).unwrap();
        let ba = fid_features(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab.abs()));
        prop_assert!(ab > -1e-9);
        let mv = |s: &[Vec<f64>]| s.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect::<Vec<Vec<f64>>>();
        let moved = fid_features(&mv(&a), &mv(&b)).unwrap();
        prop_assert!((moved - ab).abs() < 1e-6 * (1.0 + ab.abs()));
    }

    #[test]
    fn late_predictions_cost_more(m in 0.001..50.0f64) {
        prop_assert!(score_term(m) > score_term(-m));
        prop_assert!(score_term(-m) > 0.0);
        prop_assert_eq!(score_term(0.0), 0.0);
    }

    #[test]
    fn history_buffer_keeps_k_newest_rows(k in 1usize..8, pushes in 0usize..30) {
        let row = |i: usize| vec![i as f64; 4];
        let mut buf = HistoryBuffer::new((0..k).map(row).collect()).unwrap();
        for i in 0..pushes {
            buf.push(row(k + i)).unwrap();
            prop_assert_eq!(buf.k(), k);
        }
        prop_assert_eq!(buf.discarded(), pushes);
        let rows: Vec<f64> = buf.rows().map(|r| r[0]).collect();
        let expect: Vec<f64> = (pushes..pushes + k).map(|i| i as f64).collect();
        prop_assert_eq!(rows, expect);
    }

    #[test]
    fn container_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|i| (seed.wrapping_add(i as u64) % 1000) as f64 / 7.0).collect();
        let mut c = Container::new("test", &serde_json::json!({ "seed": seed })).unwrap();
        c.arrays.insert("a".into(), Tensor::new(dims.clone(), data).unwrap());
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), c.to_bytes());
        prop_assert_eq!(back.arrays["a"].shape(), &dims[..]);
    }

    #[test]
    fn configs_roundtrip_through_serde(idx in 1usize..=14, epochs in 1usize..500, seed in any::<u64>()) {
        let cfg = compose_config(&format!("conf{idx}")).unwrap();
        let back: LossConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
        let plan = TrainPlan { epochs, seed, ..TrainPlan::default() };
        let back: TrainPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }
}
