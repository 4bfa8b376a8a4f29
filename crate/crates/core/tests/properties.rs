//! Property tests over randomly drawn datasets, traces and models.

mod common;

use common::{toy_dataset, toy_model};
use njode::njode::{forward_path, jump_update, ForwardTrace};
use njode::objective::{empirical_loss, evaluation_metric, masked_loss, oracle_grid};
use njode::sde::{read_dataset, split_dataset, write_dataset, MaskMode, SdeModel};
use njode::tensor::Mode;
use proptest::prelude::*;

fn traces_for(ds: &njode::sde::Dataset, model_seed: u64, masked: bool) -> Vec<ForwardTrace> {
    let model = toy_model(ds, 3, 6, masked, model_seed);
    ds.paths.iter().map(|p| forward_path(&model, p, &ds.grid, Mode::Eval).unwrap()).collect()
}

fn model_strategy() -> impl Strategy<Value = SdeModel> {
    prop_oneof![
        Just(SdeModel::black_scholes()),
        Just(SdeModel::ornstein_uhlenbeck()),
        Just(SdeModel::heston(1)),
        Just(SdeModel::regime_switch()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_exactly_permutation_invariant(seed in 0u64..1000, n in 2usize..12, rot in 1usize..11) {
        let ds = toy_dataset(SdeModel::ornstein_uhlenbeck(), n, 12, MaskMode::Full, seed);
        let traces = traces_for(&ds, seed, false);
        let base = empirical_loss(&ds.paths, &traces).unwrap();
        let mut paths = ds.paths.clone();
        let mut tr = traces.clone();
        paths.rotate_left(rot % n);
        tr.rotate_left(rot % n);
        paths.reverse();
        tr.reverse();
        prop_assert_eq!(base.to_bits(), empirical_loss(&paths, &tr).unwrap().to_bits());
    }

    #[test]
    fn masked_loss_equals_empirical_loss_under_full_masks(seed in 0u64..1000, n in 1usize..8) {
        let ds = toy_dataset(SdeModel::heston(2), n, 10, MaskMode::Full, seed);
        let traces = traces_for(&ds, seed + 1, false);
        let a = empirical_loss(&ds.paths, &traces).unwrap();
        let b = masked_loss(&ds.paths, &traces).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn self_imputation_with_full_masks_is_the_identity(seed in 0u64..1000) {
        let ds = toy_dataset(SdeModel::heston(2), 2, 10, MaskMode::Full, seed);
        let trace = &traces_for(&ds, seed, true)[0];
        for (i, (_, x, _)) in ds.paths[0].observations().enumerate() {
            prop_assert_eq!(&trace.jump_inputs[i][..], x);
        }
    }

    #[test]
    fn metric_is_nonnegative_and_zero_on_the_oracle(seed in 0u64..1000, sde in model_strategy()) {
        let ds = toy_dataset(sde, 4, 10, MaskMode::Full, seed);
        let oracles: Vec<_> = ds.paths.iter().map(|p| oracle_grid(&ds.model, p, &ds.grid).unwrap()).collect();
        let traces = traces_for(&ds, seed, false);
        prop_assert!(evaluation_metric(&oracles, &traces).unwrap() >= 0.0);
        let perfect: Vec<ForwardTrace> = traces
            .iter()
            .zip(&oracles)
            .map(|(t, o)| ForwardTrace { y_grid: o.clone(), ..t.clone() })
            .collect();
        prop_assert_eq!(evaluation_metric(&oracles, &perfect).unwrap(), 0.0);
    }

    #[test]
    fn datasets_round_trip_through_files(seed in 0u64..1000, sde in model_strategy(), p in 0.2f64..1.0) {
        let ds = toy_dataset(sde, 3, 8, MaskMode::Bernoulli { p }, seed);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn split_partitions_the_ids(seed in 0u64..1000, n in 2usize..40, frac in 0.05f64..0.95) {
        let ds = toy_dataset(SdeModel::black_scholes(), n, 4, MaskMode::Full, 1);
        let (tr, te) = split_dataset(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.len(), (n as f64 * frac).floor() as usize);
        let mut all = tr.ids();
        all.extend(te.ids());
        all.sort_unstable();
        prop_assert_eq!(all, ds.ids());
    }

    #[test]
    fn eval_mode_jump_is_deterministic(seed in 0u64..1000, x in -3.0f64..3.0) {
        let ds = toy_dataset(SdeModel::ornstein_uhlenbeck(), 1, 4, MaskMode::Full, 1);
        let model = toy_model(&ds, 4, 6, false, seed);
        let a = jump_update(&model, &[x], None, Mode::Eval).unwrap();
        let b = jump_update(&model, &[x], None, Mode::Eval).unwrap();
        prop_assert_eq!(a, b);
    }
}
