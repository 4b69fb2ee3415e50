//! Experiment orchestration: config files, train → attack → evaluate runs,
//! the cumulative ablation ladder, memorization tracking and seed sweeps.
//!
//! # Config grammar
//!
//! TOML: `key = value` lines grouped under `[section]` headers. Every key
//! is optional and falls back to its default. JSON with the same nesting
//! is accepted when the file name ends in `.json`.
//!
//! ```toml
//! name = "cifar10s-like"
//! seeds = [0, 1, 2, 3, 4]
//!
//! [data]
//! kind = "domain"            # or "attributes"
//! # csv_dir = "data/"       # train.csv, val.csv, test_color.csv, test_gray.csv
//! member_fraction = 0.5      # of the training pool; the rest is split
//! nonmember_fraction = 0.2   # between attack non-members and the shadow pool
//!
//! [data.domain]              # DatasetSpec
//! skew = 0.95
//!
//! [model]
//! hidden = [64, 32]
//! activation = "relu"
//! gn_groups = 4              # used when techniques.gn is on
//!
//! [train]                    # TrainConfig; am / radius / ema_decay apply
//! learning_rate = 0.1        # only when the matching technique is on
//! batch_size = 64
//!
//! [schedule]
//! obs_batch_size = 256       # batch size when techniques.obs is on
//! eval_every = 20
//! patience = 10
//!
//! [techniques]
//! gn = false
//! obs = false
//! ws = false
//! am = false
//! pa = false
//! sat = false
//!
//! [privacy]
//! enabled = true
//! epsilon = 8.0              # calibrates sigma unless noise_multiplier is set
//! delta = 1e-5
//!
//! [attacks]
//! kinds = ["threshold", "threshold_entropy", "shadow_mlp", "shadow_rf"]
//! ```
//!
//! Every run seed opens the labelled streams `data`, `split`, `init`,
//! `sample`, `noise` and `shadow/i`, so toggling one stage leaves the
//! random numbers of the others untouched.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{self, AttackInputs, AttackKind, AttackResult, ClassifierKind, ShadowConfig};
use crate::data::{self, AttributeSpec, Dataset, DatasetSpec, Group};
use crate::metrics::{self, EvaluationReport};
use crate::nnkit::{self, predict, predict_attributes, Activation, Architecture, ModelParams};
use crate::optim::{self, EarlyStopping, TrainConfig, TrainOptions, TrainOutcome};
use crate::privacy;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Domain,
    Attributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub domain: DatasetSpec,
    pub attributes: AttributeSpec,
    /// Directory holding CSVs written by `gen-data`; replaces generation.
    pub csv_dir: Option<PathBuf>,
    /// Share of the training pool the target model trains on.
    pub member_fraction: f64,
    /// Share held out as attack non-members; the remainder is the shadow pool.
    pub nonmember_fraction: f64,
    /// Multi-label data: validation and test shares of the generated set.
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Domain,
            domain: DatasetSpec::default(),
            attributes: AttributeSpec::default(),
            csv_dir: None,
            member_fraction: 0.5,
            nonmember_fraction: 0.2,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gn_groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 32], activation: Activation::Relu, gn_groups: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub obs_batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { obs_batch_size: 256, eval_every: 20, patience: 10 }
    }
}

/// The six generalization techniques, each an independent switch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Techniques {
    pub gn: bool,
    pub obs: bool,
    pub ws: bool,
    pub am: bool,
    pub pa: bool,
    pub sat: bool,
}

impl Techniques {
    /// Cumulative ladder rows in order: baseline, +gn, +obs, +ws, +am, +pa, +sat.
    pub fn ladder() -> Vec<(&'static str, Techniques)> {
        let mut t = Techniques::default();
        let mut rows = vec![("baseline", t)];
        for name in ["gn", "obs", "ws", "am", "pa", "sat"] {
            match name {
                "gn" => t.gn = true,
                "obs" => t.obs = true,
                "ws" => t.ws = true,
                "am" => t.am = true,
                "pa" => t.pa = true,
                _ => t.sat = true,
            }
            rows.push((LADDER_NAMES[rows.len()], t));
        }
        rows
    }
}

const LADDER_NAMES: [&str; 7] = ["baseline", "+gn", "+obs", "+ws", "+am", "+pa", "+sat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    /// Fixed σ; when absent σ is calibrated to `epsilon`.
    pub noise_multiplier: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self { enabled: false, epsilon: 8.0, delta: 1e-5, noise_multiplier: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kinds: Vec<AttackKind>,
    pub num_shadow_models: usize,
    pub attack_hidden: usize,
    pub attack_steps: usize,
    pub attack_learning_rate: f64,
    pub rf_trees: usize,
    pub rf_depth: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let s = ShadowConfig::default();
        Self {
            kinds: AttackKind::ALL.to_vec(),
            num_shadow_models: s.num_shadow_models,
            attack_hidden: s.attack_hidden,
            attack_steps: s.attack_steps,
            attack_learning_rate: s.attack_learning_rate,
            rf_trees: s.rf_trees,
            rf_depth: s.rf_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Where reports go; not part of the config hash.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: Schedule,
    pub techniques: Techniques,
    pub privacy: PrivacyConfig,
    pub attacks: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0],
            output_dir: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig { aug_multiplicity: 4, sat_radius: 0.05, ema_decay: 0.99, ..TrainConfig::default() },
            schedule: Schedule::default(),
            techniques: Techniques::default(),
            privacy: PrivacyConfig::default(),
            attacks: AttackConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 (hex) of the compact JSON form, with `output_dir` cleared.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.train.private && !self.privacy.enabled {
            return Err(Error::Config("train.private is set but privacy.enabled is not".into()));
        }
        let f = (self.data.member_fraction, self.data.nonmember_fraction);
        if !(f.0 > 0.0 && f.1 > 0.0 && f.0 + f.1 < 1.0) {
            return Err(Error::Config(format!(
                "member_fraction {} and nonmember_fraction {} must be positive and leave room for the shadow pool",
                f.0, f.1
            )));
        }
        if self.techniques.obs && self.schedule.obs_batch_size == 0 {
            return Err(Error::Config("obs_batch_size must be positive".into()));
        }
        if self.privacy.enabled && !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.privacy.delta)));
        }
        self.effective_train_config().validate()
    }

    /// Training recipe after applying the technique switches. σ is left at
    /// the configured value; [`resolve_noise`] fills it in for private runs.
    pub fn effective_train_config(&self) -> TrainConfig {
        let t = &self.techniques;
        let mut cfg = self.train.clone();
        cfg.private = self.privacy.enabled;
        if t.obs {
            cfg.batch_size = self.schedule.obs_batch_size;
        }
        if !t.am {
            cfg.aug_multiplicity = 1;
        }
        if !t.pa {
            cfg.ema_decay = 0.0;
        }
        if !t.sat {
            cfg.sat_radius = 0.0;
        }
        if self.privacy.enabled {
            if let Some(sigma) = self.privacy.noise_multiplier {
                cfg.noise_multiplier = sigma;
            } else if cfg.noise_multiplier <= 0.0 {
                // Placeholder until calibration; keeps validation meaningful.
                cfg.noise_multiplier = 1.0;
            }
        }
        cfg
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.model.hidden.clone(),
            output_dim,
            activation: self.model.activation,
            gn_groups: self.techniques.gn.then_some(self.model.gn_groups),
            ws_enabled: self.techniques.ws,
        }
    }

    pub fn with_techniques(&self, techniques: Techniques) -> Self {
        Self { techniques, ..self.clone() }
    }
}

/// Test sets of a prepared run.
#[derive(Debug, Clone, PartialEq)]
pub enum TestSets {
    Domain { color: Dataset, gray: Dataset },
    Attributes { test: Dataset },
}

/// Every split a run needs, built once per data seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub nonmembers: Dataset,
    pub shadow_pool: Dataset,
    pub test: TestSets,
}

impl PreparedData {
    pub fn output_dim(&self) -> usize {
        match self.train.num_attributes() {
            0 => self.train.num_classes,
            k => k,
        }
    }
}

/// The training pool, validation set and test sets before carving.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub pool: Dataset,
    pub val: Dataset,
    pub test: TestSets,
}

impl RawData {
    /// File name / dataset pairs in the layout `csv_dir` expects.
    pub fn files(&self) -> Vec<(&'static str, &Dataset)> {
        let mut files = vec![("train.csv", &self.pool), ("val.csv", &self.val)];
        match &self.test {
            TestSets::Domain { color, gray } => {
                files.push(("test_color.csv", color));
                files.push(("test_gray.csv", gray));
            }
            TestSets::Attributes { test } => files.push(("test.csv", test)),
        }
        files
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, ds) in self.files() {
            data::save_csv(ds, dir.join(name))?;
        }
        Ok(())
    }
}

/// Loads `csv_dir`, or generates the configured data from the `data` stream.
pub fn load_or_generate(cfg: &ExperimentConfig, seed: u64) -> Result<RawData> {
    let d = &cfg.data;
    let raw = match (&d.csv_dir, d.kind) {
        (Some(dir), DataKind::Domain) => {
            let load = |name: &str| data::load_csv(dir.join(name));
            let test = TestSets::Domain { color: load("test_color.csv")?, gray: load("test_gray.csv")? };
            RawData { pool: load("train.csv")?, val: load("val.csv")?, test }
        }
        (Some(dir), DataKind::Attributes) => {
            let load = |name: &str| data::load_csv(dir.join(name));
            RawData { pool: load("train.csv")?, val: load("val.csv")?, test: TestSets::Attributes { test: load("test.csv")? } }
        }
        (None, DataKind::Domain) => {
            let s = data::make_synthetic_domain_dataset(&d.domain, &mut rng::stream(seed, "data"))?;
            RawData { pool: s.train, val: s.val, test: TestSets::Domain { color: s.test_color, gray: s.test_gray } }
        }
        (None, DataKind::Attributes) => {
            let all = data::make_group_imbalanced_dataset(&d.attributes, &mut rng::stream(seed, "data"))?;
            let rest = 1.0 - d.val_fraction - d.test_fraction;
            let mut parts = data::split(&all, &[rest, d.val_fraction, d.test_fraction], &mut rng::stream(seed, "data/split"))?;
            let test = parts.pop().expect("three parts");
            let val = parts.pop().expect("three parts");
            RawData { pool: parts.pop().expect("three parts"), val, test: TestSets::Attributes { test } }
        }
    };
    Ok(raw)
}

/// Builds (or loads) the data for `seed` and carves the training pool into
/// target members, attack non-members and the shadow pool.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let d = &cfg.data;
    let RawData { pool, val, test } = load_or_generate(cfg, seed)?;
    let shadow = 1.0 - d.member_fraction - d.nonmember_fraction;
    let mut parts = data::split(&pool, &[d.member_fraction, d.nonmember_fraction, shadow], &mut rng::stream(seed, "split"))?;
    let shadow_pool = parts.pop().expect("three parts");
    let nonmembers = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(PreparedData { train, val, nonmembers, shadow_pool, test })
}

/// Noise multiplier for a private run: the configured value, or the
/// calibrated one for (ε, δ, q, T).
pub fn resolve_noise(cfg: &ExperimentConfig, train_size: usize) -> Result<TrainConfig> {
    let mut train = cfg.effective_train_config();
    if !cfg.privacy.enabled {
        return Ok(train);
    }
    train.noise_multiplier = match cfg.privacy.noise_multiplier {
        Some(s) => s,
        None => {
            let q = (train.batch_size as f64 / train_size as f64).min(1.0);
            privacy::calibrate_noise(cfg.privacy.epsilon, cfg.privacy.delta, q, train.steps as u64)?.noise_multiplier
        }
    };
    Ok(train)
}

/// Everything produced by one training + evaluation run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: EvaluationReport,
    pub model: ModelParams,
    pub training: TrainOutcome,
    pub attacks: Vec<AttackResult>,
    pub train_cfg: TrainConfig,
}

impl RunArtifacts {
    pub fn attack(&self, kind: AttackKind) -> Option<&AttackResult> {
        self.attacks.iter().find(|a| a.kind == kind)
    }
}

fn shadow_config(cfg: &ExperimentConfig, classifier: ClassifierKind, train: TrainConfig) -> ShadowConfig {
    let a = &cfg.attacks;
    ShadowConfig {
        num_shadow_models: a.num_shadow_models,
        classifier,
        per_class: classifier == ClassifierKind::Mlp,
        train,
        attack_hidden: a.attack_hidden,
        attack_steps: a.attack_steps,
        attack_learning_rate: a.attack_learning_rate,
        rf_trees: a.rf_trees,
        rf_depth: a.rf_depth,
        ..ShadowConfig::default()
    }
}

/// Shadow training recipe: the target's, run for as many steps as the
/// target's selected model saw.
pub fn shadow_train_config(train_cfg: &TrainConfig, outcome: &TrainOutcome) -> TrainConfig {
    TrainConfig { steps: outcome.selected_step.max(1), ..train_cfg.clone() }
}

/// Runs the configured attacks against `model`.
pub fn run_attacks(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    train: &Dataset,
    model: &ModelParams,
    shadow_train: &TrainConfig,
    arch: &Architecture,
    seed: u64,
) -> Result<Vec<AttackResult>> {
    let inputs = AttackInputs::from_model(model, train, &data.nonmembers)?;
    let train_ids: HashSet<u64> = train.ids().into_iter().collect();
    let mut kinds = cfg.attacks.kinds.clone();
    kinds.sort();
    kinds.dedup();
    let needs_rows = kinds.iter().any(|k| matches!(k, AttackKind::ShadowMlp | AttackKind::ShadowRf));
    let rows = if needs_rows {
        if let Some(s) = data.shadow_pool.samples.iter().find(|s| train_ids.contains(&s.id)) {
            return Err(Error::Data(format!("shadow pool contains target training sample {}", s.id)));
        }
        let sc = shadow_config(cfg, ClassifierKind::Mlp, shadow_train.clone());
        Some(attacks::shadow_rows(&data.shadow_pool, arch, &sc, seed)?)
    } else {
        None
    };
    kinds
        .iter()
        .map(|kind| match kind {
            AttackKind::Threshold => attacks::threshold_attack(&inputs),
            AttackKind::ThresholdEntropy => attacks::entropy_attack(&inputs),
            AttackKind::ShadowMlp | AttackKind::ShadowRf => {
                let classifier = if *kind == AttackKind::ShadowMlp { ClassifierKind::Mlp } else { ClassifierKind::Rf };
                let sc = shadow_config(cfg, classifier, shadow_train.clone());
                attacks::attack_with_rows(&inputs, rows.as_ref().expect("rows built"), &sc, seed)
            }
        })
        .collect()
}

struct Evaluation {
    acc_color: f64,
    acc_gray: f64,
    acc: f64,
    bias: f64,
    bias_realworld: Option<f64>,
    map: Option<f64>,
}

fn evaluate_tests(model: &ModelParams, data: &PreparedData) -> Result<Evaluation> {
    match &data.test {
        TestSets::Domain { color, gray } => {
            let pc = predict(model, &color.features())?;
            let pg = predict(model, &gray.features())?;
            let hits = |labels: &[usize], ds: &Dataset| {
                labels.iter().zip(&ds.samples).filter(|(p, s)| **p == s.label).count() as f64 / ds.len() as f64
            };
            let (acc_color, acc_gray) = (hits(&pc.labels, color), hits(&pg.labels, gray));
            let k = color.num_classes.max(gray.num_classes);
            let bias = metrics::bias_synthetic(
                &metrics::prediction_counts(&pg.labels, k),
                &metrics::prediction_counts(&pc.labels, k),
            )?;
            Ok(Evaluation {
                acc_color,
                acc_gray,
                acc: (acc_color + acc_gray) / 2.0,
                bias: bias.value,
                bias_realworld: None,
                map: None,
            })
        }
        TestSets::Attributes { test } => {
            let acc = metrics::accuracy(model, test)?;
            let probs = predict_attributes(model, &test.features())?;
            let k = test.num_attributes();
            let groups: Vec<Group> = test.samples.iter().map(|s| s.group.unwrap_or(Group::B)).collect();
            let mut signed = Vec::new();
            let mut scores = vec![Vec::with_capacity(test.len()); k];
            let mut labels = vec![Vec::with_capacity(test.len()); k];
            let mut base = Vec::with_capacity(k);
            for a in 0..k {
                let (mut p, mut n) = ([0.0; 2], [0.0; 2]);
                for (i, s) in test.samples.iter().enumerate() {
                    let g = usize::from(groups[i] == Group::B);
                    let truth = s.attributes.as_ref().is_some_and(|b| b[a]);
                    let prob = probs.get(i, a);
                    if prob > 0.5 {
                        p[g] += 1.0;
                    }
                    if truth {
                        n[g] += 1.0;
                    }
                    scores[a].push(prob);
                    labels[a].push(truth);
                }
                base.push((n[1], n[0]));
                if let Ok(b) = metrics::bias_realworld(p[0], p[1], n[0], n[1]) {
                    signed.push(b);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            let abs: Vec<f64> = signed.iter().map(|b| b.abs()).collect();
            let map = metrics::mean_weighted_ap(&scores, &labels, &groups, &base).ok().map(|m| m.value);
            Ok(Evaluation {
                acc_color: acc,
                acc_gray: acc,
                acc,
                bias: mean(&abs) / 2.0,
                bias_realworld: (!signed.is_empty()).then(|| mean(&signed)),
                map,
            })
        }
    }
}

/// A trained target model with the recipe that produced it.
#[derive(Debug, Clone)]
pub struct TrainedTarget {
    pub outcome: TrainOutcome,
    pub train_cfg: TrainConfig,
    pub arch: Architecture,
}

/// Trains the target on `train` (the prepared member set unless
/// overridden): early stopping on validation accuracy when non-private,
/// the full calibrated step budget when private.
pub fn train_target(cfg: &ExperimentConfig, data: &PreparedData, train: Option<&Dataset>, seed: u64) -> Result<TrainedTarget> {
    let train = train.unwrap_or(&data.train);
    let train_cfg = resolve_noise(cfg, train.len())?;
    let arch = cfg.architecture(train.feature_dim, data.output_dim());
    let init = ModelParams::init(&arch, rng::derive_seed(seed, "init"))?;
    let options = TrainOptions {
        early_stopping: Some(EarlyStopping { eval_every: cfg.schedule.eval_every, patience: cfg.schedule.patience }),
        snapshot_steps: Vec::new(),
    };
    let outcome = optim::train(&init, train, Some(&data.val), &train_cfg, &options, seed)?;
    Ok(TrainedTarget { outcome, train_cfg, arch })
}

/// Trains on `train` (the prepared member set unless overridden), attacks
/// and evaluates. All randomness of training and attacks derives from `seed`.
pub fn run_once(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    train: Option<&Dataset>,
    seed: u64,
) -> Result<RunArtifacts> {
    let TrainedTarget { outcome, train_cfg, arch } = train_target(cfg, data, train, seed)?;
    let train = train.unwrap_or(&data.train);
    let model = outcome.model.clone();

    let shadow_train = shadow_train_config(&train_cfg, &outcome);
    let attacks = run_attacks(cfg, data, train, &model, &shadow_train, &arch, seed)?;
    let eval = evaluate_tests(&model, data)?;
    let train_acc = metrics::accuracy(&model, train)?;
    let val_acc = metrics::accuracy(&model, &data.val)?;
    let auc_of = |k: AttackKind| attacks.iter().find(|a| a.kind == k).map(|a| a.auc);
    let aucs = [
        auc_of(AttackKind::Threshold),
        auc_of(AttackKind::ThresholdEntropy),
        auc_of(AttackKind::ShadowMlp),
        auc_of(AttackKind::ShadowRf),
    ];
    let auc_max = EvaluationReport::max_auc(&aucs);
    let hs = metrics::harmonic_score(eval.acc, if auc_max.is_nan() { 0.5 } else { auc_max }, eval.bias)?;
    let epsilon = match &outcome.privacy {
        Some(p) => Some(privacy::epsilon_for(p.noise_multiplier, p.sampling_rate, p.releases as u64, cfg.privacy.delta)?.0),
        None => None,
    };
    let report = EvaluationReport {
        name: cfg.name.clone(),
        seed,
        config_hash: cfg.config_hash(),
        timestamp: metrics::report_timestamp(),
        acc_color: eval.acc_color,
        acc_gray: eval.acc_gray,
        acc: eval.acc,
        train_acc,
        val_acc,
        auc_threshold: aucs[0],
        auc_entropy: aucs[1],
        auc_shadow_mlp: aucs[2],
        auc_shadow_rf: aucs[3],
        auc_max,
        bias: eval.bias,
        hs: hs.value,
        hs_auc_clamped: hs.auc_clamped,
        hs_zero_component: hs.zero_component,
        ggap: metrics::generalization_gap(train_acc, val_acc),
        steps: outcome.steps_run,
        epsilon,
        noise_multiplier: outcome.privacy.map(|p| p.noise_multiplier),
        bias_realworld: eval.bias_realworld,
        map: eval.map,
    };
    Ok(RunArtifacts { report, model, training: outcome, attacks, train_cfg })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("json: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_reports_csv(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    let mut buf = Vec::new();
    EvaluationReport::write_csv(reports, &mut buf)?;
    write_file(path, &buf)
}

/// Writes a run's report, model checkpoint and attack outputs into `dir`.
pub fn persist_run(dir: &Path, run: &RunArtifacts) -> Result<()> {
    write_json(&dir.join("report.json"), &run.report)?;
    write_reports_csv(&dir.join("report.csv"), std::slice::from_ref(&run.report))?;
    let ckpt = dir.join("model.ckpt");
    nnkit::save_checkpoint(&run.model, &ckpt)?;
    for a in &run.attacks {
        write_json(&dir.join(format!("attack_{}.json", a.kind.name())), &a.report_json())?;
        let mut buf = Vec::new();
        a.write_scores_csv(&mut buf)?;
        write_file(&dir.join(format!("scores_{}.csv", a.kind.name())), &buf)?;
    }
    Ok(())
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn lower_median_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = v.flatten().collect();
    (!present.is_empty()).then(|| lower_median(present))
}

/// Per-metric lower median across reports (for two values, the smaller).
pub fn median_report(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    let first = reports.first().ok_or_else(|| Error::Config("median of zero reports".into()))?;
    let med = |f: fn(&EvaluationReport) -> f64| lower_median(reports.iter().map(f).collect());
    let med_opt = |f: fn(&EvaluationReport) -> Option<f64>| lower_median_opt(reports.iter().map(f));
    let steps = {
        let mut s: Vec<usize> = reports.iter().map(|r| r.steps).collect();
        s.sort_unstable();
        s[(s.len() - 1) / 2]
    };
    Ok(EvaluationReport {
        name: format!("{}/median", first.name),
        seed: first.seed,
        config_hash: first.config_hash.clone(),
        timestamp: first.timestamp,
        acc_color: med(|r| r.acc_color),
        acc_gray: med(|r| r.acc_gray),
        acc: med(|r| r.acc),
        train_acc: med(|r| r.train_acc),
        val_acc: med(|r| r.val_acc),
        auc_threshold: med_opt(|r| r.auc_threshold),
        auc_entropy: med_opt(|r| r.auc_entropy),
        auc_shadow_mlp: med_opt(|r| r.auc_shadow_mlp),
        auc_shadow_rf: med_opt(|r| r.auc_shadow_rf),
        auc_max: med(|r| r.auc_max),
        bias: med(|r| r.bias),
        hs: med(|r| r.hs),
        hs_auc_clamped: reports.iter().any(|r| r.hs_auc_clamped),
        hs_zero_component: reports.iter().any(|r| r.hs_zero_component),
        ggap: med(|r| r.ggap),
        steps,
        epsilon: med_opt(|r| r.epsilon),
        noise_multiplier: med_opt(|r| r.noise_multiplier),
        bias_realworld: med_opt(|r| r.bias_realworld),
        map: med_opt(|r| r.map),
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub reports: Vec<EvaluationReport>,
    pub median: EvaluationReport,
}

/// Runs every seed (in parallel, results in seed order), then aggregates.
/// With an output directory, seed `s` writes to `<out>/seed_<s>/` and the
/// sweep writes `reports.csv`, `summary.csv` and `summary.json`.
pub fn run_seed_sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<SweepOutcome> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let reports: Vec<EvaluationReport> = seeds
        .par_iter()
        .map(|&seed| -> Result<EvaluationReport> {
            let data = prepare_data(cfg, seed)?;
            let run = run_once(cfg, &data, None, seed).map_err(|e| e.context(format!("{} seed {seed}", cfg.name)))?;
            if let Some(out) = &cfg.output_dir {
                persist_run(&out.join(format!("seed_{seed}")), &run)?;
            }
            Ok(run.report)
        })
        .collect::<Result<_>>()?;
    let median = median_report(&reports)?;
    if let Some(out) = &cfg.output_dir {
        write_reports_csv(&out.join("reports.csv"), &reports)?;
        write_reports_csv(&out.join("summary.csv"), std::slice::from_ref(&median))?;
        write_json(&out.join("summary.json"), &median)?;
    }
    Ok(SweepOutcome { reports, median })
}

/// Runs the configured seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    run_seed_sweep(cfg, &cfg.seeds)
}

/// Cumulative ablation: baseline, +gn, +obs, +ws, +am, +pa, +sat, each a
/// full seed sweep. Row `i` lands in `<out>/<i>_<name>/`; the seven
/// medians go to `<out>/ablation.csv`.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<SweepOutcome>> {
    let mut rows = Vec::with_capacity(7);
    for (i, (name, techniques)) in Techniques::ladder().into_iter().enumerate() {
        let mut row = cfg.with_techniques(techniques);
        row.name = format!("{}/{name}", cfg.name);
        row.output_dir = cfg.output_dir.as_ref().map(|o| o.join(format!("{i}_{}", name.trim_start_matches('+'))));
        rows.push(run_experiment(&row)?);
    }
    if let Some(out) = &cfg.output_dir {
        let medians: Vec<EvaluationReport> = rows.iter().map(|r| r.median.clone()).collect();
        write_reports_csv(&out.join("ablation.csv"), &medians)?;
    }
    Ok(rows)
}

/// One row of a memorization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub step: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub auc: f64,
    pub membership_probability: f64,
}

pub fn write_track_csv<W: std::io::Write>(rows: &[TrackRow], out: W) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "train_acc", "test_acc", "auc", "membership_probability"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.train_acc.to_string(),
            r.test_acc.to_string(),
            r.auc.to_string(),
            r.membership_probability.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
}

/// Trains with snapshots at `checkpoints` (no early stopping) and, at each,
/// runs the shadow-MLP attack and records the posterior of `sample_id`.
/// Shadow models are trained once with snapshots at the same steps.
pub fn track_memorization(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    sample_id: u64,
    checkpoints: &[usize],
    seed: u64,
) -> Result<Vec<TrackRow>> {
    if !data.train.samples.iter().any(|s| s.id == sample_id) {
        return Err(Error::Data(format!("sample {sample_id} is not in the training set")));
    }
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("checkpoints must be non-empty and strictly ascending".into()));
    }
    let mut train_cfg = resolve_noise(cfg, data.train.len())?;
    train_cfg.steps = checkpoints.last().copied().unwrap_or(1).max(1);
    let arch = cfg.architecture(data.train.feature_dim, data.output_dim());
    let init = ModelParams::init(&arch, rng::derive_seed(seed, "init"))?;
    let options = TrainOptions { early_stopping: None, snapshot_steps: checkpoints.to_vec() };
    let outcome = optim::train(&init, &data.train, None, &train_cfg, &options, seed)?;

    let sc = shadow_config(cfg, ClassifierKind::Mlp, train_cfg.clone());
    let rows_per_step = attacks::shadow_rows_at(&data.shadow_pool, &arch, &sc, seed, Some(checkpoints))?;
    checkpoints
        .iter()
        .zip(rows_per_step)
        .map(|(&step, rows)| {
            let model = &outcome
                .snapshots
                .iter()
                .find(|(s, _)| *s == step)
                .ok_or_else(|| Error::Config(format!("no snapshot at step {step}")))?
                .1;
            let inputs = AttackInputs::from_model(model, &data.train, &data.nonmembers)?;
            let result = attacks::attack_with_rows(&inputs, &rows, &sc, seed)?;
            let mp = result
                .member_scores
                .iter()
                .find(|(id, _)| *id == sample_id)
                .map(|(_, s)| *s)
                .expect("sample is a member");
            Ok(TrackRow {
                step,
                train_acc: metrics::accuracy(model, &data.train)?,
                test_acc: evaluate_tests(model, data)?.acc,
                auc: result.auc,
                membership_probability: mp,
            })
        })
        .collect()
}

/// Adds a training sample whose features sit `distance` away from the
/// class-`label` centroid (along a random direction), returning its id.
pub fn plant_outlier(data: &mut PreparedData, label: usize, distance: f64, seed: u64) -> Result<u64> {
    use rand::Rng;
    let d = data.train.feature_dim;
    let class: Vec<&data::LabeledSample> = data.train.samples.iter().filter(|s| s.label == label).collect();
    if class.is_empty() {
        return Err(Error::Data(format!("class {label} has no training samples")));
    }
    let mut centroid = vec![0.0; d];
    for s in &class {
        centroid.iter_mut().zip(&s.features).for_each(|(c, v)| *c += v / class.len() as f64);
    }
    let mut r = rng::stream(seed, "outlier");
    let mut dir: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let norm = optim::l2_norm(&dir).max(1e-12);
    dir.iter_mut().for_each(|v| *v *= distance / norm);
    let id = data
        .train
        .samples
        .iter()
        .chain(&data.val.samples)
        .chain(&data.nonmembers.samples)
        .chain(&data.shadow_pool.samples)
        .map(|s| s.id)
        .max()
        .unwrap_or(0)
        + 1;
    let template = class[0].clone();
    data.train.samples.push(data::LabeledSample {
        id,
        features: centroid.iter().zip(&dir).map(|(c, v)| c + v).collect(),
        ..template
    });
    data.train.validate()?;
    Ok(id)
}
