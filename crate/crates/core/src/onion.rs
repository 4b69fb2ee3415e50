//! Onion effect: repeatedly drop the training samples an attack finds most
//! exposed, retrain on the rest and watch which samples become exposed next.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackKind};
use crate::harness::{self, ExperimentConfig, PreparedData};
use crate::metrics::EvaluationReport;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnionPlan {
    /// Samples removed after each layer. `None` peels 10% of the initial
    /// training set three times; an empty list trains a single model.
    pub removals: Option<Vec<usize>>,
    /// Attack whose per-sample scores rank the members.
    pub attack: AttackKind,
}

impl Default for OnionPlan {
    fn default() -> Self {
        Self { removals: None, attack: AttackKind::ShadowMlp }
    }
}

impl OnionPlan {
    pub fn removal_counts(&self, initial_size: usize) -> Vec<usize> {
        match &self.removals {
            Some(r) => r.clone(),
            None => vec![((initial_size as f64) * 0.1).round() as usize; 3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnionLayer {
    pub layer: usize,
    pub seed: u64,
    pub train_size: usize,
    pub report: EvaluationReport,
    /// Ids removed after this layer, most exposed first. Empty for the last.
    pub removed_ids: Vec<u64>,
    /// Members ranked by risk at this layer, most exposed first.
    pub risk: Vec<(u64, f64)>,
}

/// Seed for layer `i`: the root seed for the first model, then a labelled
/// derivation so later layers never reuse the first layer's streams.
pub fn layer_seed(root: u64, layer: usize) -> u64 {
    if layer == 0 {
        root
    } else {
        rng::derive_seed(root, &format!("onion/{layer}"))
    }
}

/// Runs the onion loop. With `out`, layer `i` writes to `<out>/layer_<i>/`
/// (report, model, attack scores and `removed_ids.csv`), and a summary of
/// every layer goes to `<out>/onion.csv`.
pub fn run_onion(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    plan: &OnionPlan,
    root_seed: u64,
    out: Option<&Path>,
) -> Result<Vec<OnionLayer>> {
    let counts = plan.removal_counts(data.train.len());
    let mut remaining = data.train.len();
    for (i, &k) in counts.iter().enumerate() {
        if k == 0 || k >= remaining {
            return Err(Error::Config(format!(
                "onion layer {i} removes {k} of {remaining} training samples; need 0 < k < size"
            )));
        }
        remaining -= k;
    }
    let mut cfg = cfg.clone();
    if !cfg.attacks.kinds.contains(&plan.attack) {
        cfg.attacks.kinds.push(plan.attack);
    }

    let mut removed: HashSet<u64> = HashSet::new();
    let mut layers = Vec::with_capacity(counts.len() + 1);
    for layer in 0..=counts.len() {
        let seed = layer_seed(root_seed, layer);
        let train = data.train.without_ids(&removed);
        let run = harness::run_once(&cfg, data, Some(&train), seed)
            .map_err(|e| e.context(format!("onion layer {layer}")))?;
        let result = run.attack(plan.attack).expect("plan attack was requested");
        let k = counts.get(layer).copied().unwrap_or(0);
        let removed_ids = attacks::top_k_risk(result, k);
        if let Some(out) = out {
            let dir = out.join(format!("layer_{layer}"));
            harness::persist_run(&dir, &run)?;
            let mut text = String::from("id\n");
            removed_ids.iter().for_each(|id| text.push_str(&format!("{id}\n")));
            std::fs::write(dir.join("removed_ids.csv"), text).map_err(|e| Error::io(&dir, e))?;
        }
        removed.extend(removed_ids.iter().copied());
        let risk = attacks::privacy_risk_scores(result);
        layers.push(OnionLayer { layer, seed, train_size: train.len(), report: run.report, removed_ids, risk });
    }
    if let Some(out) = out {
        let reports: Vec<EvaluationReport> = layers
            .iter()
            .map(|l| EvaluationReport { name: format!("{}/layer_{}", l.report.name, l.layer), ..l.report.clone() })
            .collect();
        harness::write_reports_csv(&out.join("onion.csv"), &reports)?;
    }
    Ok(layers)
}

/// Fraction of `later` exposed ids that were already in `earlier`.
pub fn overlap(earlier: &[u64], later: &[u64]) -> f64 {
    if later.is_empty() {
        return 0.0;
    }
    let set: HashSet<u64> = earlier.iter().copied().collect();
    later.iter().filter(|id| set.contains(id)).count() as f64 / later.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_zero_keeps_root_seed() {
        assert_eq!(layer_seed(7, 0), 7);
        assert_ne!(layer_seed(7, 1), 7);
        assert_ne!(layer_seed(7, 1), layer_seed(7, 2));
    }

    #[test]
    fn overlap_fraction() {
        assert_eq!(overlap(&[1, 2, 3], &[3, 4]), 0.5);
        assert_eq!(overlap(&[1], &[]), 0.0);
    }
}
