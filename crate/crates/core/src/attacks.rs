//! Black-box membership inference attacks.
//!
//! Every attack maps a confidence vector to a membership score in [0, 1];
//! AUC is the Mann-Whitney statistic of member vs non-member scores.
//! Multi-label models are attacked through a two-entry vector
//! `[c, 1 - c]`, where `c` is the mean confidence in the true bits.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::metrics::{auc, roc_curve};
use crate::nnkit::{predict, predict_attributes, Activation, Architecture, ModelParams};
use crate::optim::{self, TrainConfig, TrainOptions};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub id: u64,
    pub confidences: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackInputs {
    pub members: Vec<ConfidenceRecord>,
    pub nonmembers: Vec<ConfidenceRecord>,
}

impl AttackInputs {
    pub fn new(members: Vec<ConfidenceRecord>, nonmembers: Vec<ConfidenceRecord>) -> Result<Self> {
        if members.is_empty() || nonmembers.is_empty() {
            return Err(Error::Data("attack inputs need members and non-members".into()));
        }
        for r in members.iter().chain(&nonmembers) {
            let sum: f64 = r.confidences.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || r.confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Data(format!("confidences of sample {} do not form a distribution", r.id)));
            }
            if r.label >= r.confidences.len() {
                return Err(Error::Data(format!("label of sample {} out of range", r.id)));
            }
        }
        Ok(Self { members, nonmembers })
    }

    /// Queries `model` on its training members and on held-out non-members.
    pub fn from_model(model: &ModelParams, members: &Dataset, nonmembers: &Dataset) -> Result<Self> {
        Self::new(confidence_records(model, members)?, confidence_records(model, nonmembers)?)
    }
}

/// Black-box outputs of `model` on every sample of `data`.
pub fn confidence_records(model: &ModelParams, data: &Dataset) -> Result<Vec<ConfidenceRecord>> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let x = data.features();
    if data.num_attributes() > 0 {
        let probs = predict_attributes(model, &x)?;
        return Ok(data
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let bits = s.attributes.as_deref().unwrap_or_default();
                let row = probs.row(i);
                let c = row
                    .iter()
                    .zip(bits)
                    .map(|(p, b)| if *b { *p } else { 1.0 - p })
                    .sum::<f64>()
                    / bits.len().max(1) as f64;
                ConfidenceRecord { id: s.id, confidences: vec![c, 1.0 - c], label: 0 }
            })
            .collect());
    }
    let preds = predict(model, &x)?;
    Ok(data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| ConfidenceRecord { id: s.id, confidences: preds.confidences.row(i).to_vec(), label: s.label })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Threshold,
    ThresholdEntropy,
    ShadowMlp,
    ShadowRf,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] =
        [AttackKind::Threshold, AttackKind::ThresholdEntropy, AttackKind::ShadowMlp, AttackKind::ShadowRf];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Threshold => "threshold",
            AttackKind::ThresholdEntropy => "threshold_entropy",
            AttackKind::ShadowMlp => "shadow_mlp",
            AttackKind::ShadowRf => "shadow_rf",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(AttackKind::Threshold),
            "threshold_entropy" | "entropy" => Ok(AttackKind::ThresholdEntropy),
            "shadow_mlp" => Ok(AttackKind::ShadowMlp),
            "shadow_rf" => Ok(AttackKind::ShadowRf),
            other => Err(Error::Config(format!("unknown attack {other:?}"))),
        }
    }
}

pub const HISTOGRAM_BINS: usize = 10;

/// Score counts in equal-width bins over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
}

fn histogram(scores: &[(u64, f64)]) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for (_, s) in scores {
        let b = ((s * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub kind: AttackKind,
    /// `(id, score)` for every member, in input order.
    pub member_scores: Vec<(u64, f64)>,
    pub nonmember_scores: Vec<(u64, f64)>,
    pub auc: f64,
    pub roc: Vec<(f64, f64)>,
    pub histogram: ScoreHistogram,
}

impl AttackResult {
    pub fn from_scores(kind: AttackKind, member_scores: Vec<(u64, f64)>, nonmember_scores: Vec<(u64, f64)>) -> Result<Self> {
        let m: Vec<f64> = member_scores.iter().map(|s| s.1).collect();
        let n: Vec<f64> = nonmember_scores.iter().map(|s| s.1).collect();
        Ok(Self {
            kind,
            auc: auc(&m, &n)?,
            roc: roc_curve(&m, &n),
            histogram: ScoreHistogram { members: histogram(&member_scores), nonmembers: histogram(&nonmember_scores) },
            member_scores,
            nonmember_scores,
        })
    }

    pub fn per_sample_scores(&self) -> BTreeMap<u64, f64> {
        self.member_scores.iter().chain(&self.nonmember_scores).copied().collect()
    }

    /// JSON summary: kind, AUC, ROC points and score histogram.
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "auc": self.auc,
            "roc": self.roc,
            "histogram": self.histogram,
        })
    }

    /// Per-sample CSV `id,score,is_member`.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "score", "is_member"]).map_err(err)?;
        for (scores, flag) in [(&self.member_scores, "1"), (&self.nonmember_scores, "0")] {
            for (id, s) in scores {
                w.write_record([id.to_string(), format!("{s:.16e}"), flag.to_string()]).map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
    }
}

fn score_all(inputs: &AttackInputs, kind: AttackKind, f: impl Fn(&ConfidenceRecord) -> f64) -> Result<AttackResult> {
    let score = |rs: &[ConfidenceRecord]| rs.iter().map(|r| (r.id, f(r))).collect();
    AttackResult::from_scores(kind, score(&inputs.members), score(&inputs.nonmembers))
}

/// Membership score = highest confidence.
pub fn threshold_attack(inputs: &AttackInputs) -> Result<AttackResult> {
    score_all(inputs, AttackKind::Threshold, |r| r.confidences.iter().copied().fold(0.0, f64::max))
}

/// Shannon entropy in nats; zero probabilities contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Membership score = `1 - H(p) / ln k`: 1 for one-hot outputs, 0 for
/// uniform ones. A monotone transform of `-H`, so the AUC is the same.
pub fn entropy_attack(inputs: &AttackInputs) -> Result<AttackResult> {
    score_all(inputs, AttackKind::ThresholdEntropy, |r| {
        let k = r.confidences.len();
        if k < 2 {
            return 1.0;
        }
        (1.0 - entropy(&r.confidences) / (k as f64).ln()).clamp(0.0, 1.0)
    })
}

/// Attack feature row: confidences sorted descending, then the one-hot label.
pub fn attack_features(r: &ConfidenceRecord) -> Vec<f64> {
    let mut row = r.confidences.clone();
    row.sort_by(|a, b| b.total_cmp(a));
    let k = r.confidences.len();
    row.extend((0..k).map(|c| if c == r.label { 1.0 } else { 0.0 }));
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Mlp,
    Rf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowConfig {
    pub num_shadow_models: usize,
    pub classifier: ClassifierKind,
    /// One attack classifier per class label; falls back to the pooled
    /// classifier for classes without both member and non-member rows.
    pub per_class: bool,
    /// Training recipe of the shadow models (normally the target's).
    pub train: TrainConfig,
    pub attack_hidden: usize,
    pub attack_steps: usize,
    pub attack_learning_rate: f64,
    pub attack_batch_size: usize,
    pub rf_trees: usize,
    pub rf_depth: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            num_shadow_models: 8,
            classifier: ClassifierKind::Mlp,
            per_class: true,
            train: TrainConfig::default(),
            attack_hidden: 32,
            attack_steps: 1500,
            attack_learning_rate: 0.2,
            attack_batch_size: 64,
            rf_trees: 64,
            rf_depth: 8,
        }
    }
}

impl ShadowConfig {
    pub fn rf() -> Self {
        Self { classifier: ClassifierKind::Rf, per_class: false, ..Self::default() }
    }

    /// Smallest holdout pool that gives every shadow model two samples per
    /// class on each side of its in / out split.
    pub fn minimum_pool(num_classes: usize) -> usize {
        (4 * num_classes).max(20)
    }
}

/// Binary classifier trained on attack rows.
#[derive(Debug, Clone)]
pub enum AttackClassifier {
    Mlp(ModelParams),
    Forest(RandomForest),
}

impl AttackClassifier {
    pub fn member_probability(&self, row: &[f64]) -> Result<f64> {
        match self {
            AttackClassifier::Mlp(m) => {
                let x = crate::nnkit::Matrix::new(1, row.len(), row.to_vec())?;
                Ok(predict(m, &x)?.confidences.get(0, 1))
            }
            AttackClassifier::Forest(f) => Ok(f.predict_proba(row)),
        }
    }
}

/// One-hidden-layer MLP on `rows`, trained with plain minibatch SGD.
pub fn train_attack_mlp(rows: &[Vec<f64>], labels: &[bool], cfg: &ShadowConfig, seed: u64) -> Result<ModelParams> {
    let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Data("no attack rows".into()))?;
    let samples = rows
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (r, &l))| LabeledSample {
            id: i as u64,
            features: r.clone(),
            label: usize::from(l),
            domain: crate::data::Domain::Color,
            group: None,
            attributes: None,
        })
        .collect();
    let data = Dataset::new(samples, 2, dim)?;
    let arch = Architecture {
        input_dim: dim,
        hidden: vec![cfg.attack_hidden],
        output_dim: 2,
        activation: Activation::Relu,
        gn_groups: None,
        ws_enabled: false,
    };
    let init = ModelParams::init(&arch, seed)?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.attack_learning_rate,
        batch_size: cfg.attack_batch_size,
        steps: cfg.attack_steps,
        ..TrainConfig::default()
    };
    Ok(optim::train(&init, &data, None, &train_cfg, &TrainOptions::default(), seed)?.model)
}

fn fit_classifier(rows: &[Vec<f64>], labels: &[bool], cfg: &ShadowConfig, seed: u64) -> Result<AttackClassifier> {
    match cfg.classifier {
        ClassifierKind::Mlp => Ok(AttackClassifier::Mlp(train_attack_mlp(rows, labels, cfg, seed)?)),
        ClassifierKind::Rf => Ok(AttackClassifier::Forest(train_random_forest(
            rows,
            labels,
            cfg.rf_trees,
            cfg.rf_depth,
            &mut rng::stream(seed, "forest"),
        )?)),
    }
}

/// Attack rows gathered from shadow models: `(row, label, is_member)`.
pub type ShadowRows = Vec<(Vec<f64>, usize, bool)>;

/// Trains the shadow models and returns their labelled attack rows.
///
/// Shadow `i` splits the pool in half with its own stream
/// (`shadow/i`), trains on one half and queries both.
pub fn shadow_rows(pool: &Dataset, arch: &Architecture, cfg: &ShadowConfig, seed: u64) -> Result<ShadowRows> {
    Ok(shadow_rows_at(pool, arch, cfg, seed, None)?.remove(0))
}

/// Like [`shadow_rows`], but queries every shadow model at each of
/// `steps` (0 = untrained) instead of only at the end of training.
pub fn shadow_rows_at(
    pool: &Dataset,
    arch: &Architecture,
    cfg: &ShadowConfig,
    seed: u64,
    steps: Option<&[usize]>,
) -> Result<Vec<ShadowRows>> {
    if cfg.num_shadow_models == 0 {
        return Err(Error::Config("num_shadow_models must be at least 1".into()));
    }
    let minimum = ShadowConfig::minimum_pool(pool.num_classes);
    if pool.len() < minimum {
        return Err(Error::Config(format!(
            "shadow pool has {} samples, needs at least {minimum}",
            pool.len()
        )));
    }
    let per_shadow: Vec<Vec<ShadowRows>> = (0..cfg.num_shadow_models)
        .into_par_iter()
        .map(|i| -> Result<Vec<ShadowRows>> {
            let label = format!("shadow/{i}");
            let split = crate::data::split(pool, &[0.5, 0.5], &mut rng::stream(seed, &label))?;
            let (inside, outside) = (&split[0], &split[1]);
            let shadow_seed = rng::derive_seed(seed, &label);
            let init = ModelParams::init(arch, shadow_seed)?;
            let mut train_cfg = cfg.train.clone();
            let options = match steps {
                Some(s) => {
                    train_cfg.steps = s.iter().copied().max().unwrap_or(0).max(1);
                    TrainOptions { early_stopping: None, snapshot_steps: s.to_vec() }
                }
                None => TrainOptions::default(),
            };
            let trained = optim::train(&init, inside, None, &train_cfg, &options, shadow_seed)?;
            let models: Vec<&ModelParams> = match steps {
                Some(s) => s
                    .iter()
                    .map(|step| {
                        trained
                            .snapshots
                            .iter()
                            .find(|(k, _)| k == step)
                            .map(|(_, m)| m)
                            .ok_or_else(|| Error::Config(format!("no shadow snapshot at step {step}")))
                    })
                    .collect::<Result<_>>()?,
                None => vec![&trained.model],
            };
            models
                .into_iter()
                .map(|model| {
                    let mut rows = Vec::with_capacity(pool.len());
                    for (set, member) in [(inside, true), (outside, false)] {
                        for r in confidence_records(model, set)? {
                            rows.push((attack_features(&r), r.label, member));
                        }
                    }
                    Ok(rows)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let count = per_shadow.first().map_or(0, Vec::len);
    Ok((0..count)
        .map(|j| per_shadow.iter().flat_map(|per_step| per_step[j].iter().cloned()).collect())
        .collect())
}

/// Shadow-model attack against `target`.
///
/// `pool` must not share ids with the target's training set. The attack
/// classifier is per class when `cfg.per_class`, else pooled.
pub fn shadow_attack(
    target: &AttackInputs,
    pool: &Dataset,
    target_train_ids: &HashSet<u64>,
    arch: &Architecture,
    cfg: &ShadowConfig,
    seed: u64,
) -> Result<AttackResult> {
    if let Some(s) = pool.samples.iter().find(|s| target_train_ids.contains(&s.id)) {
        return Err(Error::Data(format!("shadow pool contains target training sample {}", s.id)));
    }
    let rows = shadow_rows(pool, arch, cfg, seed)?;
    attack_with_rows(target, &rows, cfg, seed)
}

/// Fits the attack classifier(s) on shadow rows and scores the target.
pub fn attack_with_rows(target: &AttackInputs, rows: &ShadowRows, cfg: &ShadowConfig, seed: u64) -> Result<AttackResult> {
    let kind = match cfg.classifier {
        ClassifierKind::Mlp => AttackKind::ShadowMlp,
        ClassifierKind::Rf => AttackKind::ShadowRf,
    };
    let mut per_class: BTreeMap<usize, AttackClassifier> = BTreeMap::new();
    if cfg.per_class {
        let classes: Vec<usize> = rows.iter().map(|r| r.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let fitted: Vec<(usize, Option<AttackClassifier>)> = classes
            .par_iter()
            .map(|&c| -> Result<(usize, Option<AttackClassifier>)> {
                let (x, y): (Vec<Vec<f64>>, Vec<bool>) =
                    rows.iter().filter(|r| r.1 == c).map(|r| (r.0.clone(), r.2)).unzip();
                if !(y.contains(&true) && y.contains(&false)) {
                    return Ok((c, None));
                }
                let model = fit_classifier(&x, &y, cfg, rng::derive_seed(seed, &format!("attack/class/{c}")))?;
                Ok((c, Some(model)))
            })
            .collect::<Result<_>>()?;
        per_class.extend(fitted.into_iter().filter_map(|(c, m)| m.map(|m| (c, m))));
    }

    // The pooled classifier serves every class without its own; it is only
    // fitted when some target record needs it.
    let needs_pooled = target.members.iter().chain(&target.nonmembers).any(|r| !per_class.contains_key(&r.label));
    let pooled = if needs_pooled {
        let all_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let all_labels: Vec<bool> = rows.iter().map(|r| r.2).collect();
        Some(fit_classifier(&all_rows, &all_labels, cfg, rng::derive_seed(seed, "attack/pooled"))?)
    } else {
        None
    };

    let score = |records: &[ConfidenceRecord]| -> Result<Vec<(u64, f64)>> {
        records
            .iter()
            .map(|r| {
                let clf = per_class.get(&r.label).or(pooled.as_ref()).expect("pooled classifier fitted");
                Ok((r.id, clf.member_probability(&attack_features(r))?))
            })
            .collect()
    };
    AttackResult::from_scores(kind, score(&target.members)?, score(&target.nonmembers)?)
}

/// Member-side scores ranked most exposed first, ties by ascending id.
pub fn privacy_risk_scores(result: &AttackResult) -> Vec<(u64, f64)> {
    let mut ranked = result.member_scores.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Ids of the `k` highest-risk members.
pub fn top_k_risk(result: &AttackResult, k: usize) -> Vec<u64> {
    privacy_risk_scores(result).into_iter().take(k).map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(p) => return *p,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Bagged CART trees with gini splits and √d candidate features per split.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub num_features: usize,
}

impl RandomForest {
    /// Mean over trees of the positive-class frequency in the reached leaf.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn predict_proba(forest: &RandomForest, row: &[f64]) -> f64 {
    forest.predict_proba(row)
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut StreamRng) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        let n = idx.len();
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(pos as f64 / n as f64));
        if depth >= self.max_depth || pos == 0 || pos == n {
            return slot;
        }
        let d = self.rows[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        features.truncate(self.mtry);

        // (impurity, feature, threshold); the first best candidate wins ties.
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            idx.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let mut left_pos = 0.0;
            for k in 1..n {
                left_pos += f64::from(u8::from(self.labels[idx[k - 1]]));
                let (lo, hi) = (self.rows[idx[k - 1]][f], self.rows[idx[k]][f]);
                if lo == hi {
                    continue;
                }
                let (nl, nr) = (k as f64, (n - k) as f64);
                let right_pos = pos as f64 - left_pos;
                let impurity = (nl * gini(left_pos, nl) + nr * gini(right_pos, nr)) / n as f64;
                if best.map_or(true, |b| impurity < b.0) {
                    best = Some((impurity, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return slot;
        };
        idx.sort_by(|&a, &b| self.rows[a][feature].total_cmp(&self.rows[b][feature]).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| self.rows[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }
}

/// Trains `trees` CART trees of depth at most `max_depth` on bootstrap
/// resamples. Per-tree seeds are drawn serially from `rng`, so the forest
/// is deterministic even though trees are grown in parallel.
pub fn train_random_forest(
    rows: &[Vec<f64>],
    labels: &[bool],
    trees: usize,
    max_depth: usize,
    rng: &mut StreamRng,
) -> Result<RandomForest> {
    if rows.is_empty() {
        return Err(Error::Data("random forest needs at least one row".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if trees == 0 {
        return Err(Error::Config("random forest needs at least one tree".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("attack rows differ in width".into()));
    }
    let mtry = ((d as f64).sqrt().round() as usize).clamp(1, d.max(1));
    let seeds: Vec<[u8; 32]> = (0..trees).map(|_| rng.gen()).collect();
    let grown = seeds
        .par_iter()
        .map(|seed| {
            let mut tree_rng = StreamRng::from_seed(*seed);
            let n = rows.len();
            let mut idx: Vec<usize> = (0..n).map(|_| tree_rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder { rows, labels, max_depth, mtry, nodes: Vec::new() };
            builder.build(&mut idx, 0, &mut tree_rng);
            Tree { nodes: builder.nodes }
        })
        .collect();
    Ok(RandomForest { trees: grown, num_features: d })
}
