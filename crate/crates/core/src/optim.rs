//! Training-step algebra and the training loop.
//!
//! Every update divides the summed per-example gradient by the nominal batch
//! size `B`, private or not. As a result, with `σ = 0`, `ρ = 0`, `K = 1` and
//! `C = ∞`, the SGD, SAT and DP-SGD steps trace the same trajectory.
//!
//! Minibatches are Poisson samples with rate `q = B / N`. An empty draw
//! leaves the parameters alone but still counts as a step (and as a privacy
//! release).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use rayon::prelude::*;

use crate::nnkit::{Example, GradientContext, ModelParams, Target};
use crate::rng::{self, StreamRng};
use crate::{metrics, Error, Result};

/// Optimizer hyper-parameters. Serialized names follow the experiment
/// config (`am`, `radius`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    #[serde(rename = "am")]
    pub aug_multiplicity: usize,
    /// Jitter standard deviation for AM, relative to the feature scale.
    pub aug_std: f64,
    #[serde(rename = "radius")]
    pub sat_radius: f64,
    pub ema_decay: f64,
    pub steps: usize,
    pub private: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            clip_norm: 1.0,
            noise_multiplier: 0.0,
            aug_multiplicity: 1,
            aug_std: 0.05,
            sat_radius: 0.0,
            ema_decay: 0.0,
            steps: 1000,
            private: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.noise_multiplier >= 0.0) {
            return fail(format!("noise_multiplier must be non-negative, got {}", self.noise_multiplier));
        }
        if self.private && self.noise_multiplier <= 0.0 {
            return fail("private training needs noise_multiplier > 0".into());
        }
        if self.aug_multiplicity == 0 {
            return fail("am (augmentation multiplicity) must be at least 1".into());
        }
        if !(self.aug_std >= 0.0) {
            return fail(format!("aug_std must be non-negative, got {}", self.aug_std));
        }
        if !(self.sat_radius >= 0.0) {
            return fail(format!("radius must be non-negative, got {}", self.sat_radius));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return fail(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        if self.steps == 0 {
            return fail("steps must be positive".into());
        }
        Ok(())
    }
}

/// DP-SAT memory: the previous step's noisy aggregate gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SatState {
    pub prev_perturbed_gradient: Option<Vec<f64>>,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `g` onto the ball of radius `c` when it lies outside.
pub fn clip_gradient(g: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {c}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot clip a non-finite gradient".into()));
    }
    let norm = l2_norm(g);
    if norm <= c {
        return Ok(g.to_vec());
    }
    let scale = c / norm;
    Ok(g.iter().map(|v| v * scale).collect())
}

/// Randomized feature transform used by augmentation multiplicity.
pub trait Augment {
    fn apply(&mut self, features: &[f64], rng: &mut StreamRng) -> Vec<f64>;
}

impl<F: FnMut(&[f64], &mut StreamRng) -> Vec<f64>> Augment for F {
    fn apply(&mut self, features: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self(features, rng)
    }
}

/// Leaves features untouched and draws nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Augment for Identity {
    fn apply(&mut self, features: &[f64], _: &mut StreamRng) -> Vec<f64> {
        features.to_vec()
    }
}

/// Additive isotropic Gaussian jitter.
#[derive(Debug, Clone, Copy)]
pub struct Jitter {
    pub std: f64,
}

impl Augment for Jitter {
    fn apply(&mut self, features: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        features
            .iter()
            .map(|x| x + self.std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Per-sample gradients, each the mean over `k` augmented views.
///
/// Views are drawn serially from `rng` in batch order; the gradient work
/// itself is parallel and draws nothing.
pub fn augmented_gradients(
    model: &ModelParams,
    batch: &[Example],
    k: usize,
    augment: &mut dyn Augment,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Config("augmentation multiplicity must be at least 1".into()));
    }
    let views: Vec<Vec<f64>> = batch
        .iter()
        .flat_map(|ex| (0..k).map(|_| ex.features).collect::<Vec<_>>())
        .map(|f| augment.apply(f, rng))
        .collect();
    let ctx = GradientContext::new(model);
    views
        .par_chunks(k)
        .zip(batch.par_iter())
        .map(|(views, ex)| {
            let grad = |f: &Vec<f64>| ctx.gradient(&Example { id: ex.id, features: f, target: ex.target });
            let mut mean = grad(&views[0])?;
            for f in &views[1..] {
                mean.iter_mut().zip(grad(f)?).for_each(|(m, v)| *m += v);
            }
            if k > 1 {
                let inv = 1.0 / k as f64;
                mean.iter_mut().for_each(|m| *m *= inv);
            }
            Ok(mean)
        })
        .collect()
}

/// `clip((1/K) Σ_k grad(augment_k(sample)), C)`.
pub fn averaged_clipped_gradient(
    model: &ModelParams,
    example: &Example,
    k: usize,
    augment: &mut dyn Augment,
    c: f64,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let g = augmented_gradients(model, std::slice::from_ref(example), k, augment, rng)?;
    clip_gradient(&g[0], c)
}

/// `w - lr * g`.
pub fn descend(w: &[f64], g: &[f64], lr: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(w, g)| w - lr * g).collect()
}

/// Point at distance `rho` from `w` along `direction`, or `None` when the
/// direction is zero or the radius is zero.
pub fn ascend(w: &[f64], direction: &[f64], rho: f64) -> Option<Vec<f64>> {
    let norm = l2_norm(direction);
    if rho == 0.0 || norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let scale = rho / norm;
    Some(w.iter().zip(direction).map(|(w, d)| w + scale * d).collect())
}

/// One SAT step on a flat parameter vector: ascend along the normalized
/// gradient, take the gradient there, apply it at the original point.
pub fn sat_update(w: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>, lr: f64, rho: f64) -> Vec<f64> {
    let g = grad(w);
    match ascend(w, &g, rho) {
        Some(perturbed) => descend(w, &grad(&perturbed), lr),
        None => descend(w, &g, lr),
    }
}

/// `(Σ clipped + N(0, σ²C² I)) / B`. Noise is drawn in coordinate order;
/// nothing is drawn when `σ = 0`.
pub fn noisy_aggregate(
    clipped: &[Vec<f64>],
    dim: usize,
    sigma: f64,
    c: f64,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    for g in clipped {
        total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
    }
    if sigma > 0.0 {
        let std = sigma * c;
        for t in &mut total {
            *t += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let inv = 1.0 / batch_size as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    total
}

fn mean_gradient(model: &ModelParams, batch: &[Example], cfg: &TrainConfig, augment: &mut dyn Augment, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let grads = augmented_gradients(model, batch, cfg.aug_multiplicity, augment, rng)?;
    Ok(noisy_aggregate(&grads, model.num_params(), 0.0, 1.0, cfg.batch_size, rng))
}

/// Clipped per-example gradients, summed, noised, divided by `B`.
fn private_gradient(model: &ModelParams, batch: &[Example], cfg: &TrainConfig, augment: &mut dyn Augment, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let grads = augmented_gradients(model, batch, cfg.aug_multiplicity, augment, rng)?;
    let clipped = grads
        .iter()
        .map(|g| clip_gradient(g, cfg.clip_norm))
        .collect::<Result<Vec<_>>>()?;
    for (g, ex) in clipped.iter().zip(batch) {
        let norm = l2_norm(g);
        if norm > cfg.clip_norm * (1.0 + 1e-12) {
            return Err(Error::Numeric(format!(
                "clipped gradient of sample {} has norm {norm} above C = {}",
                ex.id, cfg.clip_norm
            )));
        }
    }
    Ok(noisy_aggregate(&clipped, model.num_params(), cfg.noise_multiplier, cfg.clip_norm, cfg.batch_size, rng))
}

fn apply(model: &ModelParams, g: &[f64], lr: f64) -> Result<ModelParams> {
    let next = descend(&model.to_flat(), g, lr);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("parameters diverged to non-finite values".into()));
    }
    model.with_flat(&next)
}

/// Plain minibatch SGD (with AM averaging when `K > 1`).
pub fn sgd_step(model: &ModelParams, batch: &[Example], cfg: &TrainConfig, augment: &mut dyn Augment, rng: &mut StreamRng) -> Result<ModelParams> {
    if batch.is_empty() {
        return Ok(model.clone());
    }
    let g = mean_gradient(model, batch, cfg, augment, rng)?;
    apply(model, &g, cfg.learning_rate)
}

/// Non-private SAT: ascend by `ρ g/‖g‖`, re-evaluate the minibatch gradient
/// there and apply it at the original parameters.
pub fn sat_step(model: &ModelParams, batch: &[Example], cfg: &TrainConfig, augment: &mut dyn Augment, rng: &mut StreamRng) -> Result<ModelParams> {
    if batch.is_empty() {
        return Ok(model.clone());
    }
    let w = model.to_flat();
    let g = mean_gradient(model, batch, cfg, augment, rng)?;
    let g = match ascend(&w, &g, cfg.sat_radius) {
        Some(perturbed) => mean_gradient(&model.with_flat(&perturbed)?, batch, cfg, augment, rng)?,
        None => g,
    };
    apply(model, &g, cfg.learning_rate)
}

/// DP-SGD: per-example clipping, one Gaussian release per step.
pub fn dp_sgd_step(model: &ModelParams, batch: &[Example], cfg: &TrainConfig, augment: &mut dyn Augment, rng: &mut StreamRng) -> Result<ModelParams> {
    if batch.is_empty() {
        return Ok(model.clone());
    }
    let g = private_gradient(model, batch, cfg, augment, rng)?;
    apply(model, &g, cfg.learning_rate)
}

/// DP-SAT: the ascent direction is the previous step's noisy aggregate, so
/// the step releases exactly one noised gradient, like DP-SGD.
pub fn dp_sat_step(
    model: &ModelParams,
    batch: &[Example],
    cfg: &TrainConfig,
    state: &SatState,
    augment: &mut dyn Augment,
    rng: &mut StreamRng,
) -> Result<(ModelParams, SatState)> {
    if batch.is_empty() {
        return Ok((model.clone(), state.clone()));
    }
    let w = model.to_flat();
    let perturbed = match &state.prev_perturbed_gradient {
        Some(prev) if prev.len() != w.len() => {
            return Err(Error::Shape(format!("DP-SAT state has {} entries, model has {}", prev.len(), w.len())))
        }
        Some(prev) => ascend(&w, prev, cfg.sat_radius),
        None => None,
    };
    let g = match perturbed {
        Some(p) => private_gradient(&model.with_flat(&p)?, batch, cfg, augment, rng)?,
        None => private_gradient(model, batch, cfg, augment, rng)?,
    };
    let next = apply(model, &g, cfg.learning_rate)?;
    Ok((next, SatState { prev_perturbed_gradient: Some(g) }))
}

/// `decay * average + (1 - decay) * current`, elementwise.
pub fn ema_update(average: &ModelParams, current: &ModelParams, decay: f64) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Config(format!("ema decay {decay} outside [0, 1]")));
    }
    let a = average.to_flat();
    let c = current.to_flat();
    let same_shape = a.len() == c.len()
        && average.layers.len() == current.layers.len()
        && average
            .layers
            .iter()
            .zip(&current.layers)
            .all(|(x, y)| x.in_dim == y.in_dim && x.out_dim == y.out_dim);
    if !same_shape {
        return Err(Error::Shape("EMA operands have different shapes".into()));
    }
    let mixed: Vec<f64> = a.iter().zip(&c).map(|(a, c)| decay * a + (1.0 - decay) * c).collect();
    average.with_flat(&mixed)
}

/// Poisson subsample: every index joins independently with probability `q`.
pub fn poisson_sample(n: usize, q: f64, rng: &mut StreamRng) -> Vec<usize> {
    (0..n).filter(|_| rng.gen::<f64>() < q).collect()
}

/// Which update rule a configuration selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Sat,
    DpSgd,
    DpSat,
}

impl Method {
    pub fn for_config(cfg: &TrainConfig) -> Self {
        match (cfg.private, cfg.sat_radius > 0.0) {
            (false, false) => Method::Sgd,
            (false, true) => Method::Sat,
            (true, false) => Method::DpSgd,
            (true, true) => Method::DpSat,
        }
    }

    pub fn is_private(self) -> bool {
        matches!(self, Method::DpSgd | Method::DpSat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub eval_every: usize,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { eval_every: 20, patience: 10 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Used for non-private runs only; private runs consume exactly `steps`.
    pub early_stopping: Option<EarlyStopping>,
    /// Steps (0 = initial model) at which the evaluation model is captured.
    pub snapshot_steps: Vec<usize>,
}

/// What the accountant needs to know about a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    /// Noised releases, one per step including empty-batch steps.
    pub releases: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model used for evaluation: the EMA copy, restored to the best
    /// validation checkpoint when early stopping ran.
    pub model: ModelParams,
    pub method: Method,
    pub steps_run: usize,
    /// Step whose evaluation model was kept.
    pub selected_step: usize,
    pub empty_batches: usize,
    pub expected_batch_size: f64,
    pub mean_batch_size: f64,
    pub privacy: Option<PrivacyLedger>,
    pub snapshots: Vec<(usize, ModelParams)>,
    /// `(step, validation accuracy)` at every early-stopping evaluation.
    pub validation_curve: Vec<(usize, f64)>,
}

/// Root-mean-square per-feature standard deviation, the jitter unit for AM.
pub fn feature_scale(data: &Dataset) -> f64 {
    let n = data.len();
    if n < 2 || data.feature_dim == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for j in 0..data.feature_dim {
        let mean = data.samples.iter().map(|s| s.features[j]).sum::<f64>() / n as f64;
        total += data.samples.iter().map(|s| (s.features[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    (total / data.feature_dim as f64).sqrt()
}

/// Trains `init` on `train`.
///
/// Random streams derive from `seed`: `sample` (Poisson batches), `noise`
/// (augmentation and DP noise). Non-private runs with early stopping
/// evaluate on `val` every `eval_every` steps and keep the best evaluation
/// model, stopping after `patience` evaluations without improvement.
pub fn train(
    init: &ModelParams,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    options: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let method = Method::for_config(cfg);
    let n = train.len();
    let q = (cfg.batch_size as f64 / n as f64).min(1.0);
    let mut sample_rng = rng::stream(seed, "sample");
    let mut noise_rng = rng::stream(seed, "noise");
    let mut jitter = Jitter { std: cfg.aug_std * feature_scale(train) };
    let mut identity = Identity;
    let augment: &mut dyn Augment = if cfg.aug_multiplicity > 1 { &mut jitter } else { &mut identity };

    let stopping = match (method.is_private(), options.early_stopping, val) {
        (false, Some(es), Some(v)) if es.eval_every > 0 => Some((es, v)),
        _ => None,
    };

    let mut model = init.clone();
    let mut average = init.clone();
    let mut sat_state = SatState::default();
    let mut snapshots = Vec::new();
    let capture = |step: usize, m: &ModelParams, snaps: &mut Vec<(usize, ModelParams)>| {
        if options.snapshot_steps.contains(&step) {
            snaps.push((step, m.clone()));
        }
    };
    capture(0, &average, &mut snapshots);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut curve = Vec::new();
    let mut empty = 0;
    let mut realized = 0usize;
    let mut steps_run = 0;

    for step in 1..=cfg.steps {
        let indices = poisson_sample(n, q, &mut sample_rng);
        realized += indices.len();
        if indices.is_empty() {
            empty += 1;
        }
        let batch: Vec<Example> = indices.iter().map(|&i| train.samples[i].example()).collect();
        model = match method {
            Method::Sgd => sgd_step(&model, &batch, cfg, augment, &mut noise_rng)?,
            Method::Sat => sat_step(&model, &batch, cfg, augment, &mut noise_rng)?,
            Method::DpSgd => dp_sgd_step(&model, &batch, cfg, augment, &mut noise_rng)?,
            Method::DpSat => {
                let (m, s) = dp_sat_step(&model, &batch, cfg, &sat_state, augment, &mut noise_rng)?;
                sat_state = s;
                m
            }
        };
        average = ema_update(&average, &model, cfg.ema_decay)?;
        steps_run = step;
        capture(step, &average, &mut snapshots);

        if let Some((es, v)) = stopping {
            if step % es.eval_every == 0 {
                let acc = metrics::accuracy(&average, v)?;
                curve.push((step, acc));
                if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                    best = Some((acc, step, average.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= es.patience {
                        break;
                    }
                }
            }
        }
    }

    let (model, selected_step) = match best {
        Some((_, step, m)) => (m, step),
        None => (average, steps_run),
    };
    Ok(TrainOutcome {
        model,
        method,
        steps_run,
        selected_step,
        empty_batches: empty,
        expected_batch_size: q * n as f64,
        mean_batch_size: realized as f64 / steps_run.max(1) as f64,
        privacy: method.is_private().then_some(PrivacyLedger {
            noise_multiplier: cfg.noise_multiplier,
            sampling_rate: q,
            releases: steps_run,
        }),
        snapshots,
        validation_curve: curve,
    })
}

/// Mean training loss over a dataset, for diagnostics and tests.
pub fn mean_loss(model: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for s in &data.samples {
        total += crate::nnkit::loss(model, &s.example())?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Examples with class targets built from borrowed feature rows.
pub fn class_examples<'a>(rows: &'a [Vec<f64>], labels: &[usize]) -> Vec<Example<'a>> {
    rows.iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (f, &l))| Example { id: i as u64, features: f, target: Target::Class(l) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{Activation, Architecture, DenseLayer, Matrix};
    use crate::nnkit::per_example_gradients;

    fn rng() -> StreamRng {
        rng::stream(5, "test")
    }

    #[test]
    fn clip_fixtures() {
        assert_eq!(clip_gradient(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        let c = clip_gradient(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_gradient(&c, 1.0).unwrap(), c);
        assert!(matches!(clip_gradient(&[f64::NAN], 1.0), Err(Error::Numeric(_))));
        assert_eq!(clip_gradient(&[1e300, 1e300], f64::INFINITY).unwrap(), vec![1e300, 1e300]);
    }

    #[test]
    fn sat_on_quadratic_matches_hand_value() {
        let w = sat_update(&[1.0], |w| vec![w[0]], 0.1, 0.1);
        assert!((w[0] - 0.89).abs() < 1e-15);
        let plain = sat_update(&[1.0], |w| vec![w[0]], 0.1, 0.0);
        assert!((plain[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_skips_perturbation() {
        assert!(ascend(&[1.0, 2.0], &[0.0, 0.0], 0.5).is_none());
    }

    fn toy() -> (ModelParams, Vec<Vec<f64>>, Vec<usize>) {
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![],
            output_dim: 2,
            activation: Activation::Relu,
            gn_groups: None,
            ws_enabled: false,
        };
        let model = ModelParams::init(&arch, 3).unwrap();
        let rows = vec![vec![1.0, 0.5], vec![-1.0, -0.2], vec![0.8, 1.2], vec![-0.6, -1.5]];
        (model, rows, vec![0, 1, 0, 1])
    }

    #[test]
    fn am_identity_reductions() {
        let (model, rows, labels) = toy();
        let batch = class_examples(&rows, &labels);
        let plain = per_example_gradients(&model, &batch[..1]).unwrap().per_example[0].clone();
        let k1 = averaged_clipped_gradient(&model, &batch[0], 1, &mut Identity, 0.1, &mut rng()).unwrap();
        assert_eq!(k1, clip_gradient(&plain, 0.1).unwrap());
        let k4 = averaged_clipped_gradient(&model, &batch[0], 4, &mut Identity, 0.1, &mut rng()).unwrap();
        for (a, b) in k1.iter().zip(&k4) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn am_two_fixed_jitters_average_then_clip() {
        let (model, rows, labels) = toy();
        let batch = class_examples(&rows, &labels);
        let shifts = [[0.1, -0.2], [-0.3, 0.05]];
        let mut call = 0;
        let mut fixed = |f: &[f64], _: &mut StreamRng| {
            let s = shifts[call % 2];
            call += 1;
            vec![f[0] + s[0], f[1] + s[1]]
        };
        let got = averaged_clipped_gradient(&model, &batch[0], 2, &mut fixed, 0.05, &mut rng()).unwrap();

        let views: Vec<Vec<f64>> = shifts.iter().map(|s| vec![rows[0][0] + s[0], rows[0][1] + s[1]]).collect();
        let g: Vec<Vec<f64>> = views
            .iter()
            .map(|v| {
                let ex = Example { id: 0, features: v, target: Target::Class(0) };
                per_example_gradients(&model, &[ex]).unwrap().per_example.remove(0)
            })
            .collect();
        let mean: Vec<f64> = g[0].iter().zip(&g[1]).map(|(a, b)| (a + b) / 2.0).collect();
        let want = clip_gradient(&mean, 0.05).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig { learning_rate: 0.5, batch_size: 4, clip_norm: 1.0, ..TrainConfig::default() }
    }

    #[test]
    fn dp_sgd_without_noise_and_huge_clip_is_sgd() {
        let (model, rows, labels) = toy();
        let batch = class_examples(&rows, &labels);
        let c = TrainConfig { clip_norm: 1e12, ..cfg() };
        let a = dp_sgd_step(&model, &batch[..1], &c, &mut Identity, &mut rng()).unwrap();
        let b = sgd_step(&model, &batch[..1], &c, &mut Identity, &mut rng()).unwrap();
        assert_eq!(a, b);
        let before = crate::nnkit::loss(&model, &batch[0]).unwrap();
        let after = crate::nnkit::loss(&a, &batch[0]).unwrap();
        assert!(after < before);
    }

    #[test]
    fn dp_update_bounded_by_lr_times_clip() {
        let (mut model, rows, labels) = toy();
        // Large weights so raw gradients exceed the clip norm.
        let flat: Vec<f64> = model.to_flat().iter().map(|v| v * 50.0).collect();
        model.set_flat(&flat).unwrap();
        let batch = class_examples(&rows, &labels);
        let c = TrainConfig { clip_norm: 0.01, batch_size: 4, ..cfg() };
        let next = dp_sgd_step(&model, &batch, &c, &mut Identity, &mut rng()).unwrap();
        let delta: Vec<f64> = next.to_flat().iter().zip(model.to_flat()).map(|(a, b)| a - b).collect();
        assert!(l2_norm(&delta) <= c.learning_rate * c.clip_norm * (1.0 + 1e-12));
    }

    #[test]
    fn dp_sat_first_step_and_zero_radius_match_dp_sgd() {
        let (model, rows, labels) = toy();
        let batch = class_examples(&rows, &labels);
        let c = TrainConfig { noise_multiplier: 1.0, sat_radius: 0.05, private: true, ..cfg() };
        let sgd = dp_sgd_step(&model, &batch, &c, &mut Identity, &mut rng()).unwrap();
        let (sat, state) = dp_sat_step(&model, &batch, &c, &SatState::default(), &mut Identity, &mut rng()).unwrap();
        assert_eq!(sat, sgd);
        assert_eq!(state.prev_perturbed_gradient.as_ref().unwrap().len(), model.num_params());

        let c0 = TrainConfig { sat_radius: 0.0, ..c };
        let (mut a, mut b) = (model.clone(), model.clone());
        let (mut ra, mut rb) = (rng(), rng());
        let mut st = SatState::default();
        for _ in 0..5 {
            a = dp_sgd_step(&a, &batch, &c0, &mut Identity, &mut ra).unwrap();
            let (m, s) = dp_sat_step(&b, &batch, &c0, &st, &mut Identity, &mut rb).unwrap();
            b = m;
            st = s;
        }
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_is_identity() {
        let (model, _, _) = toy();
        let c = TrainConfig { noise_multiplier: 1.0, private: true, ..cfg() };
        let mut r = rng();
        assert_eq!(dp_sgd_step(&model, &[], &c, &mut Identity, &mut r).unwrap(), model);
        let st = SatState { prev_perturbed_gradient: Some(vec![1.0; model.num_params()]) };
        let (m, s) = dp_sat_step(&model, &[], &c, &st, &mut Identity, &mut r).unwrap();
        assert_eq!((m, s), (model, st));
    }

    #[test]
    fn ema_fixtures() {
        let one = |v: f64| {
            ModelParams::new(
                vec![DenseLayer::new(Matrix::new(1, 2, vec![v, v]).unwrap(), vec![v]).unwrap()],
                Activation::Relu,
                None,
                false,
                0,
            )
            .unwrap()
        };
        assert_eq!(ema_update(&one(0.0), &one(2.0), 0.0).unwrap(), one(2.0));
        assert_eq!(ema_update(&one(0.0), &one(2.0), 1.0).unwrap(), one(0.0));
        assert_eq!(ema_update(&one(0.0), &one(2.0), 0.5).unwrap(), one(1.0));

        let mut avg = one(0.0);
        let mut prev_gap = f64::INFINITY;
        for _ in 0..50 {
            avg = ema_update(&avg, &one(3.0), 0.9).unwrap();
            let gap = (avg.to_flat()[0] - 3.0).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!((prev_gap - 3.0 * 0.9f64.powi(50)).abs() < 1e-12);

        let other = ModelParams::new(vec![DenseLayer::zeros(2, 2)], Activation::Relu, None, false, 0).unwrap();
        assert!(matches!(ema_update(&one(0.0), &other, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { private: true, noise_multiplier: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { aug_multiplicity: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { ema_decay: 1.5, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn config_uses_table_names() {
        let json = serde_json::to_value(TrainConfig::default()).unwrap();
        for key in ["learning_rate", "noise_multiplier", "am", "radius", "batch_size", "clip_norm"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
