use std::cell::RefCell;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trilemma::data::DatasetSpec;
use trilemma::nnkit::{Architecture, ModelParams};
use trilemma::optim::*;
use trilemma::privacy;

/// Two quadratic wells of equal depth: a sharp one at -1 (curvature 190,
/// just inside plain SGD's stability limit at lr 0.01) and a flat one at +1.
fn double_well_grad(x: f64) -> f64 {
    let (sharp, flat) = (95.0, 1.0);
    if sharp * (x + 1.0).powi(2) < flat * (x - 1.0).powi(2) {
        2.0 * sharp * (x + 1.0)
    } else {
        2.0 * flat * (x - 1.0)
    }
}

fn lands_in_flat_basin(seed: u64, rho: f64) -> bool {
    let rng = RefCell::new(ChaCha8Rng::seed_from_u64(seed));
    let mut w = vec![rng.borrow_mut().gen_range(-2.0..0.5)];
    let noisy = |p: &[f64]| {
        let noise: f64 = rng.borrow_mut().sample(StandardNormal);
        vec![double_well_grad(p[0]) + 0.5 * noise]
    };
    for _ in 0..3000 {
        w = sat_update(&w, noisy, 0.01, rho);
    }
    w[0] > 0.0
}

#[test]
fn sat_prefers_the_flat_basin() {
    let sgd = (0..100).filter(|&s| lands_in_flat_basin(s, 0.0)).count();
    let sat = (0..100).filter(|&s| lands_in_flat_basin(s, 0.02)).count();
    assert!(sat > sgd, "SAT {sat}/100 vs SGD {sgd}/100 in the flat basin");
}

fn small_problem() -> (ModelParams, trilemma::data::Dataset, trilemma::data::Dataset) {
    let spec = DatasetSpec {
        num_classes: 3,
        samples_per_class: 40,
        val_per_class: 10,
        test_per_class: 10,
        feature_dim: 6,
        domain_channels: 2,
        seed: 4,
        ..DatasetSpec::default()
    };
    let splits = spec.generate().unwrap();
    let arch = Architecture { hidden: vec![8], ..Architecture::default_for(6, 3) };
    (ModelParams::init(&arch, 1).unwrap(), splits.train, splits.val)
}

#[test]
fn training_replays_bit_for_bit() {
    let (init, train_set, val) = small_problem();
    for cfg in [
        TrainConfig { steps: 60, batch_size: 16, ..TrainConfig::default() },
        TrainConfig { steps: 60, batch_size: 16, aug_multiplicity: 3, sat_radius: 0.05, ema_decay: 0.9, ..TrainConfig::default() },
        TrainConfig { steps: 60, batch_size: 16, private: true, noise_multiplier: 1.2, sat_radius: 0.05, ..TrainConfig::default() },
    ] {
        let opts = TrainOptions { early_stopping: None, snapshot_steps: vec![0, 30, 60] };
        let a = train(&init, &train_set, Some(&val), &cfg, &opts, 11).unwrap();
        let b = train(&init, &train_set, Some(&val), &cfg, &opts, 11).unwrap();
        let bits = |m: &ModelParams| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.0, y.0);
            assert_eq!(bits(&x.1), bits(&y.1));
        }
        let c = train(&init, &train_set, Some(&val), &cfg, &opts, 12).unwrap();
        assert_ne!(bits(&a.model), bits(&c.model));
    }
}

#[test]
fn dp_sat_spends_the_same_budget_as_dp_sgd() {
    let (init, train_set, _) = small_problem();
    let base = TrainConfig { steps: 40, batch_size: 12, private: true, noise_multiplier: 1.3, ..TrainConfig::default() };
    let sat = TrainConfig { sat_radius: 0.05, ..base.clone() };
    let opts = TrainOptions::default();
    let a = train(&init, &train_set, None, &base, &opts, 3).unwrap();
    let b = train(&init, &train_set, None, &sat, &opts, 3).unwrap();
    assert_eq!(a.method, Method::DpSgd);
    assert_eq!(b.method, Method::DpSat);
    let (pa, pb) = (a.privacy.unwrap(), b.privacy.unwrap());
    assert_eq!(pa, pb);
    assert_eq!(pa.releases, 40);
    let ea = privacy::epsilon_for(pa.noise_multiplier, pa.sampling_rate, pa.releases as u64, 1e-5).unwrap();
    let eb = privacy::epsilon_for(pb.noise_multiplier, pb.sampling_rate, pb.releases as u64, 1e-5).unwrap();
    assert_eq!(ea.0.to_bits(), eb.0.to_bits());
}

#[test]
fn private_runs_ignore_early_stopping() {
    let (init, train_set, val) = small_problem();
    let cfg = TrainConfig { steps: 100, batch_size: 12, private: true, noise_multiplier: 1.0, ..TrainConfig::default() };
    let opts = TrainOptions { early_stopping: Some(EarlyStopping { eval_every: 5, patience: 1 }), snapshot_steps: vec![] };
    let out = train(&init, &train_set, Some(&val), &cfg, &opts, 0).unwrap();
    assert_eq!(out.steps_run, 100);
    assert_eq!(out.privacy.unwrap().releases, 100);
}

#[test]
fn early_stopping_keeps_the_best_checkpoint() {
    let (init, train_set, val) = small_problem();
    let cfg = TrainConfig { steps: 2000, batch_size: 16, ..TrainConfig::default() };
    let es = EarlyStopping { eval_every: 10, patience: 3 };
    let opts = TrainOptions { early_stopping: Some(es.clone()), snapshot_steps: vec![] };
    let out = train(&init, &train_set, Some(&val), &cfg, &opts, 0).unwrap();
    let best = out
        .validation_curve
        .iter()
        .fold((0usize, f64::NEG_INFINITY), |b, &(s, a)| if a > b.1 { (s, a) } else { b });
    assert_eq!(out.selected_step, best.0);
    assert!(out.steps_run <= best.0 + es.eval_every * es.patience);
}

proptest! {
    #[test]
    fn clipping_bounds_and_idempotence(g in prop::collection::vec(-100.0f64..100.0, 1..20), c in 0.01f64..10.0) {
        let once = clip_gradient(&g, c).unwrap();
        prop_assert!(l2_norm(&once) <= c * (1.0 + 1e-12));
        let twice = clip_gradient(&once, c).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        if l2_norm(&g) <= c {
            prop_assert_eq!(&once, &g);
        }
    }

    #[test]
    fn ema_interpolates(decay in 0.0f64..=1.0, seed in 0u64..1000) {
        let arch = Architecture::default_for(3, 2);
        let a = ModelParams::init(&arch, seed).unwrap();
        let b = ModelParams::init(&arch, seed + 1).unwrap();
        let m = ema_update(&a, &b, decay).unwrap();
        for ((x, y), z) in a.to_flat().iter().zip(b.to_flat()).zip(m.to_flat()) {
            let (lo, hi) = if *x < y { (*x, y) } else { (y, *x) };
            prop_assert!(z >= lo - 1e-12 && z <= hi + 1e-12);
        }
    }
}
