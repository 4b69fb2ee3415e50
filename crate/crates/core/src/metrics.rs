//! Evaluation metrics: accuracy, ROC / AUC, domain bias, group bias
//! amplification, the Harmonic Score, generalization gap and weighted AP.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group};
use crate::nnkit::{predict, predict_attributes, ModelParams};
use crate::{Error, Result};

/// Top-1 accuracy for class datasets; mean per-attribute accuracy (sigmoid
/// thresholded at 0.5) for multi-label datasets.
pub fn accuracy(model: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let x = data.features();
    if data.num_attributes() > 0 {
        let probs = predict_attributes(model, &x)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for (i, s) in data.samples.iter().enumerate() {
            let bits = s.attributes.as_deref().unwrap_or_default();
            for (p, b) in probs.row(i).iter().zip(bits) {
                hits += usize::from((*p > 0.5) == *b);
                total += 1;
            }
        }
        return Ok(hits as f64 / total.max(1) as f64);
    }
    let preds = predict(model, &x)?;
    let hits = preds.labels.iter().zip(&data.samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Area under the ROC curve: the probability that a random member outscores
/// a random non-member, ties counting one half.
pub fn auc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Metric("AUC needs at least one member and one non-member".into()));
    }
    if members.iter().chain(nonmembers).any(|s| s.is_nan()) {
        return Err(Error::Metric("AUC scores contain NaN".into()));
    }
    let mut sorted = nonmembers.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, kept integral so the division is the only rounding.
    let mut twice_u: u128 = 0;
    for &m in members {
        let below = sorted.partition_point(|&x| x < m);
        let not_above = sorted.partition_point(|&x| x <= m);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / (2.0 * members.len() as f64 * nonmembers.len() as f64))
}

/// ROC points from sweeping every distinct score as a threshold
/// (`score >= t` ⇒ member), from (0, 0) to (1, 1).
pub fn roc_curve(members: &[f64], nonmembers: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (members.len().max(1) as f64, nonmembers.len().max(1) as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    points
}

/// Per-class prediction counts on the gray and color test sets.
pub fn prediction_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        if l < num_classes {
            counts[l] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBias {
    pub value: f64,
    /// Classes never predicted on either test set, left out of the mean.
    pub excluded_classes: Vec<usize>,
}

/// Mean over classes of `max(Gr_c, Col_c) / (Gr_c + Col_c) - 0.5`, where
/// `Gr_c` / `Col_c` count gray / color test samples predicted as class `c`.
pub fn bias_synthetic(gray_counts: &[usize], color_counts: &[usize]) -> Result<SyntheticBias> {
    if gray_counts.len() != color_counts.len() {
        return Err(Error::Metric(format!(
            "{} gray counts vs {} color counts",
            gray_counts.len(),
            color_counts.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = Vec::new();
    for (c, (&g, &col)) in gray_counts.iter().zip(color_counts).enumerate() {
        if g + col == 0 {
            excluded.push(c);
            continue;
        }
        total += g.max(col) as f64 / (g + col) as f64 - 0.5;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Metric("no class was ever predicted".into()));
    }
    Ok(SyntheticBias { value: total / counted as f64, excluded_classes: excluded })
}

/// `P_w / (P_w + P_m) - N_w / (N_w + N_m)`: predicted minus base share of
/// group `w` among positives.
pub fn bias_realworld(p_w: f64, p_m: f64, n_w: f64, n_m: f64) -> Result<f64> {
    if p_w + p_m <= 0.0 {
        return Err(Error::Metric("no predicted positives (P_w + P_m = 0)".into()));
    }
    if n_w + n_m <= 0.0 {
        return Err(Error::Metric("no ground-truth positives (N_w + N_m = 0)".into()));
    }
    Ok(p_w / (p_w + p_m) - n_w / (n_w + n_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicScore {
    pub value: f64,
    /// Raw AUC was below 0.5 and was raised to 0.5.
    pub auc_clamped: bool,
    /// A component was exactly 0, so the score is defined as 0.
    pub zero_component: bool,
}

const RANGE_TOLERANCE: f64 = 1e-9;

/// Harmonic mean of accuracy, `1 - 2(auc - 0.5)` and `1 - 2·bias`.
pub fn harmonic_score(accuracy: f64, mia_auc: f64, bias: f64) -> Result<HarmonicScore> {
    let in_range = |v: f64, lo: f64, hi: f64| v >= lo - RANGE_TOLERANCE && v <= hi + RANGE_TOLERANCE;
    if !in_range(accuracy, 0.0, 1.0) {
        return Err(Error::Metric(format!("accuracy {accuracy} outside [0, 1]")));
    }
    if !in_range(mia_auc, 0.0, 1.0) {
        return Err(Error::Metric(format!("AUC {mia_auc} outside [0, 1]")));
    }
    if !in_range(bias, 0.0, 0.5) {
        return Err(Error::Metric(format!("bias {bias} outside [0, 0.5]")));
    }
    let auc_clamped = mia_auc < 0.5;
    let auc = mia_auc.clamp(0.5, 1.0);
    let components = [
        accuracy.clamp(0.0, 1.0),
        1.0 - 2.0 * (auc - 0.5),
        1.0 - 2.0 * bias.clamp(0.0, 0.5),
    ];
    if components.iter().any(|c| *c <= 0.0) {
        return Ok(HarmonicScore { value: 0.0, auc_clamped, zero_component: true });
    }
    let value = 3.0 / components.iter().map(|c| 1.0 / c).sum::<f64>();
    Ok(HarmonicScore { value, auc_clamped, zero_component: false })
}

/// Train minus validation accuracy, in percentage points.
pub fn generalization_gap(train_acc: f64, val_acc: f64) -> f64 {
    100.0 * (train_acc - val_acc)
}

/// Average precision with every positive of group `g` weighted
/// `(N_m + N_w) / (2 N_g)` and negatives weighted 1. Precision and recall
/// are evaluated at each distinct score (tied samples enter together) and
/// summed step-wise without interpolation. Group `A` is `w`, `B` is `m`.
pub fn weighted_average_precision(
    scores: &[f64],
    labels: &[bool],
    groups: &[Group],
    n_m: f64,
    n_w: f64,
) -> Result<f64> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(Error::Metric("scores, labels and groups differ in length".into()));
    }
    for (g, name) in [(Group::A, "w"), (Group::B, "m")] {
        if !labels.iter().zip(groups).any(|(l, gr)| *l && *gr == g) {
            return Err(Error::Metric(format!("group {name} has no positives")));
        }
    }
    if !(n_m > 0.0 && n_w > 0.0) {
        return Err(Error::Metric("group sizes N_m and N_w must be positive".into()));
    }
    let weight = |i: usize| match groups[i] {
        Group::A => (n_m + n_w) / (2.0 * n_w),
        Group::B => (n_m + n_w) / (2.0 * n_m),
    };
    let total_pos: f64 = (0..scores.len()).filter(|&i| labels[i]).map(weight).sum();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp, mut ap, mut prev_recall) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            let j = order[i];
            if labels[j] {
                tp += weight(j);
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / total_pos;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub value: f64,
    pub per_attribute: Vec<Option<f64>>,
    /// Attributes with a group lacking positives.
    pub skipped: Vec<usize>,
}

/// Weighted mAP over attributes. `scores[k]` / `labels[k]` hold attribute
/// `k` for every sample; `base[k] = (N_m, N_w)`.
pub fn mean_weighted_ap(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    groups: &[Group],
    base: &[(f64, f64)],
) -> Result<MeanAp> {
    let mut per_attribute = Vec::with_capacity(scores.len());
    let mut skipped = Vec::new();
    for k in 0..scores.len() {
        let (n_m, n_w) = base[k];
        match weighted_average_precision(&scores[k], &labels[k], groups, n_m, n_w) {
            Ok(v) => per_attribute.push(Some(v)),
            Err(Error::Metric(_)) => {
                per_attribute.push(None);
                skipped.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    let kept: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Metric("every attribute was skipped".into()));
    }
    Ok(MeanAp { value: kept.iter().sum::<f64>() / kept.len() as f64, per_attribute, skipped })
}

/// Metrics of one run. The CSV row layout is fixed by [`EvaluationReport::CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`, 0 when unset, so
    /// reports are reproducible byte for byte.
    pub timestamp: u64,
    pub acc_color: f64,
    pub acc_gray: f64,
    /// Accuracy used by the Harmonic Score.
    pub acc: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub auc_threshold: Option<f64>,
    pub auc_entropy: Option<f64>,
    pub auc_shadow_mlp: Option<f64>,
    pub auc_shadow_rf: Option<f64>,
    pub auc_max: f64,
    pub bias: f64,
    pub hs: f64,
    pub hs_auc_clamped: bool,
    pub hs_zero_component: bool,
    pub ggap: f64,
    pub steps: usize,
    pub epsilon: Option<f64>,
    pub noise_multiplier: Option<f64>,
    /// Multi-label runs: mean signed amplification over attributes.
    pub bias_realworld: Option<f64>,
    /// Multi-label runs: group-weighted mAP on the test set.
    pub map: Option<f64>,
}

impl EvaluationReport {
    pub const CSV_HEADER: [&'static str; 22] = [
        "name",
        "seed",
        "config_hash",
        "timestamp",
        "acc_color",
        "acc_gray",
        "auc_max",
        "auc_threshold",
        "auc_entropy",
        "auc_shadow_mlp",
        "auc_shadow_rf",
        "bias",
        "hs",
        "ggap",
        "acc",
        "train_acc",
        "val_acc",
        "steps",
        "epsilon",
        "noise_multiplier",
        "bias_realworld",
        "map",
    ];

    /// Largest AUC among the attacks that ran.
    pub fn max_auc(aucs: &[Option<f64>]) -> f64 {
        aucs.iter().flatten().copied().fold(f64::NAN, f64::max)
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.name.clone(),
            self.seed.to_string(),
            self.config_hash.clone(),
            self.timestamp.to_string(),
            self.acc_color.to_string(),
            self.acc_gray.to_string(),
            self.auc_max.to_string(),
            opt(self.auc_threshold),
            opt(self.auc_entropy),
            opt(self.auc_shadow_mlp),
            opt(self.auc_shadow_rf),
            self.bias.to_string(),
            self.hs.to_string(),
            self.ggap.to_string(),
            self.acc.to_string(),
            self.train_acc.to_string(),
            self.val_acc.to_string(),
            self.steps.to_string(),
            opt(self.epsilon),
            opt(self.noise_multiplier),
            opt(self.bias_realworld),
            opt(self.map),
        ]
    }

    pub fn write_csv<W: Write>(reports: &[EvaluationReport], out: W) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER).map_err(err)?;
        for r in reports {
            w.write_record(r.csv_row()).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
    }
}

/// Report timestamp: `SOURCE_DATE_EPOCH` when set, otherwise 0.
pub fn report_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}
