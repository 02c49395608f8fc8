use glister_core::data::{gen_synthetic, inject_label_noise, parse_libsvm, serialize_libsvm};
use glister_core::glister::{
    glister_online_train, greedy_dss, proxy_objective, subset_digest, GlisterConfig, SelectionContext, TRACE_HEADER,
};
use glister_core::models::{LossKind, ModelParams, ModelSpec};
use glister_core::numerics::SeededRng;
use glister_core::{GreedyKind, SetFunction, SyntheticKind};
use proptest::prelude::*;

#[test]
fn digest_matches_reference_sha256() {
    // sha256 over sorted u64 little-endian indices, computed outside Rust
    assert_eq!(subset_digest(&[2, 0, 1]), "ab25350e3e65efeb");
    assert_eq!(subset_digest(&[5]), "f13ee6ed54ea2aae");
    assert_eq!(subset_digest(&[]), "e3b0c44298fc1c14");
}

#[test]
fn online_training_end_to_end() {
    let train = gen_synthetic(SyntheticKind::Separable2, 40, 1).unwrap().data;
    let val = gen_synthetic(SyntheticKind::Separable2, 5, 2).unwrap().data;
    let test = gen_synthetic(SyntheticKind::Separable2, 20, 3).unwrap().data;
    let mut cfg = GlisterConfig::new(16, LossKind::CrossEntropy, 9);
    cfg.select_every = 5;
    let (_, subset, trace) = glister_online_train(&train, &val, &test, ModelSpec::Logistic, &cfg, 20).unwrap();
    assert_eq!(subset.len(), 16);
    assert_eq!(trace.records.len(), 20);
    assert_eq!(trace.records.iter().filter(|r| r.monitor.is_some()).count(), 4);
    assert!(trace.last().unwrap().test_acc > 0.9);
    assert!(trace.to_csv().starts_with(TRACE_HEADER));

    let again = glister_online_train(&train, &val, &test, ModelSpec::Logistic, &cfg, 20).unwrap();
    assert_eq!(again.1, subset);
}

#[test]
fn libsvm_round_trip_keeps_noisy_labels() {
    let ds = gen_synthetic(SyntheticKind::Overlapping4, 10, 4).unwrap().data;
    let noisy = inject_label_noise(&ds, 0.3, 5).unwrap();
    assert_eq!(noisy.noise_count(), 12);
    let back = parse_libsvm(&serialize_libsvm(&noisy)).unwrap();
    assert_eq!(back.labels(), noisy.labels());
    assert_eq!(back.features(), noisy.features());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_returns_k_distinct_rows(seed in 0u64..1000, k in 1usize..30, r in 1usize..6, lazy in any::<bool>()) {
        let train = gen_synthetic(SyntheticKind::Separable4, 10, seed).unwrap().data;
        let val = gen_synthetic(SyntheticKind::Separable4, 3, seed + 1).unwrap().data;
        let params = ModelParams::init(ModelSpec::Mlp { hidden: 6 }, 2, 4, seed);
        let ctx = SelectionContext::from_datasets(&params, &train, &val, LossKind::CrossEntropy).unwrap();
        let mut cfg = GlisterConfig::new(k, LossKind::CrossEntropy, seed);
        cfg.rounds = r.min(k);
        cfg.greedy = if lazy { GreedyKind::Lazy } else { GreedyKind::Naive };
        let s = greedy_dss(&ctx, &cfg, &mut SeededRng::new(seed)).unwrap();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(s.iter().all(|&i| i < train.len()));
    }

    #[test]
    fn proxy_equals_lookahead_at_budget(seed in 0u64..1000, budget in 1usize..8) {
        let train = gen_synthetic(SyntheticKind::BinarySlack, 6, seed).unwrap().data;
        let val = gen_synthetic(SyntheticKind::BinarySlack, 4, seed + 1).unwrap().data;
        let params = ModelParams::init(ModelSpec::Logistic, 2, 1, seed);
        let ctx = SelectionContext::from_datasets(&params, &train, &val, LossKind::Logistic).unwrap();
        let f = proxy_objective(&ctx, 0.05, budget).unwrap();
        let set = SeededRng::new(seed).sample_indices(train.len(), budget);
        let exact = ctx.exact_value(&set, 0.05).unwrap();
        prop_assert!((f.value(&set) - exact).abs() <= 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn digest_ignores_order(mut v in proptest::collection::vec(0usize..500, 0..20)) {
        let d = subset_digest(&v);
        v.reverse();
        prop_assert_eq!(subset_digest(&v), d);
    }
}
