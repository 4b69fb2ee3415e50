#![allow(dead_code)]

pub mod oracles;
pub mod quadrature;

use trilemma::attacks::AttackKind;
use trilemma::harness::ExperimentConfig;

/// A run small enough for unit-speed tests: 4 classes, 8 features,
/// one hidden layer of 16, two shadow models.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "tiny".into();
    let d = &mut cfg.data.domain;
    d.num_classes = 4;
    d.samples_per_class = 60;
    d.val_per_class = 20;
    d.test_per_class = 20;
    d.feature_dim = 8;
    d.domain_channels = 2;
    cfg.model.hidden = vec![16];
    cfg.model.gn_groups = 4;
    cfg.train.steps = 150;
    cfg.train.batch_size = 16;
    cfg.schedule.obs_batch_size = 32;
    cfg.attacks.kinds = AttackKind::ALL.to_vec();
    cfg.attacks.num_shadow_models = 2;
    cfg.attacks.attack_steps = 200;
    cfg.attacks.rf_trees = 8;
    cfg.attacks.rf_depth = 4;
    cfg
}
