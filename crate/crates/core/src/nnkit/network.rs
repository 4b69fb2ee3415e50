use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::norm::{check_groups, standardize_backward, standardize_in_place, DEFAULT_EPS};
use super::Matrix;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Affine layer with a row-major `out_dim x in_dim` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            in_dim: weight.cols(),
            out_dim: weight.rows(),
            weight: weight.into_vec(),
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Layer sizes and normalization switches used to initialize a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub gn_groups: Option<usize>,
    pub ws_enabled: bool,
}

impl Architecture {
    /// The default `d -> 64 -> 32 -> classes` relu network.
    pub fn default_for(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 32],
            output_dim,
            activation: Activation::Relu,
            gn_groups: None,
            ws_enabled: false,
        }
    }
}

/// Weights of a dense classifier plus its normalization configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    pub gn_groups: Option<usize>,
    pub ws_enabled: bool,
    pub seed: u64,
}

impl ModelParams {
    pub fn new(
        layers: Vec<DenseLayer>,
        activation: Activation,
        gn_groups: Option<usize>,
        ws_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        let model = Self { layers, activation, gn_groups, ws_enabled, seed };
        model.validate()?;
        Ok(model)
    }

    /// Glorot-uniform initialization with zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut dims = vec![arch.input_dim];
        dims.extend(&arch.hidden);
        dims.push(arch.output_dim);
        let mut rng = rng::stream(seed, "init");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = DenseLayer::zeros(fan_in, fan_out);
                for v in &mut layer.weight {
                    *v = rng.gen_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Self::new(layers, arch.activation, arch.gn_groups, arch.ws_enabled, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.len() != layer.in_dim * layer.out_dim || layer.bias.len() != layer.out_dim {
                return Err(Error::Shape(format!("layer {i} storage does not match its dimensions")));
            }
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        if let Some(groups) = self.gn_groups {
            for layer in &self.layers[..self.layers.len() - 1] {
                check_groups(layer.out_dim, groups)?;
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weight);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Overwrites the parameters from a flat vector laid out as [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.len();
            layer.weight.copy_from_slice(&flat[offset..offset + w]);
            offset += w;
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_flat(flat)?;
        Ok(m)
    }

    fn is_hidden(&self, index: usize) -> bool {
        index + 1 < self.layers.len()
    }
}

/// Supervision attached to one example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class index, trained with softmax cross-entropy.
    Class(usize),
    /// Independent binary attributes, trained with per-output sigmoid
    /// binary cross-entropy.
    Bits(&'a [bool]),
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub id: u64,
    pub features: &'a [f64],
    pub target: Target<'a>,
}

/// One flat gradient per batch element, in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub per_example: Vec<Vec<f64>>,
    pub batch_ids: Vec<u64>,
}

impl GradientSet {
    /// Sum of the per-example gradients.
    pub fn sum(&self) -> Vec<f64> {
        let len = self.per_example.first().map_or(0, Vec::len);
        let mut total = vec![0.0; len];
        for g in &self.per_example {
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        total
    }
}

/// Activations recorded while evaluating one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Input to the layer.
    pub input: Vec<f64>,
    /// Pre-activation after group normalization (equal to the affine output
    /// when normalization is off).
    pub normalized: Vec<f64>,
    /// Reciprocal standard deviation per normalization group.
    pub group_inv_std: Vec<f64>,
    /// Whether each group's variance hit the floor.
    pub group_floored: Vec<bool>,
    /// Layer output after the activation (logits for the readout layer).
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `traces[example][layer]`.
    pub traces: Vec<Vec<LayerTrace>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub cache: ForwardCache,
}

/// Effective weights for one evaluation: standardized copies for hidden
/// layers when weight standardization is on.
struct Prepared {
    weights: Vec<Vec<f64>>,
    /// Per hidden layer, per row: (inverse std, floored) from standardization.
    ws_stats: Vec<Option<Vec<(f64, bool)>>>,
}

fn prepare(model: &ModelParams) -> Prepared {
    let mut weights = Vec::with_capacity(model.layers.len());
    let mut ws_stats = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        if model.ws_enabled && model.is_hidden(i) && layer.in_dim > 0 {
            let mut w = layer.weight.clone();
            let stats = w
                .chunks_mut(layer.in_dim)
                .map(|row| {
                    let n = row.len() as f64;
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = standardize_in_place(row, DEFAULT_EPS);
                    (inv, var <= DEFAULT_EPS)
                })
                .collect();
            weights.push(w);
            ws_stats.push(Some(stats));
        } else {
            weights.push(layer.weight.clone());
            ws_stats.push(None);
        }
    }
    Prepared { weights, ws_stats }
}

fn affine(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let in_dim = x.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| {
            let row = &weight[r * in_dim..(r + 1) * in_dim];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

fn trace_example(model: &ModelParams, prepared: &Prepared, x: &[f64]) -> Vec<LayerTrace> {
    let mut traces = Vec::with_capacity(model.layers.len());
    let mut input = x.to_vec();
    for (i, layer) in model.layers.iter().enumerate() {
        let mut pre = affine(&prepared.weights[i], &layer.bias, &input);
        let mut group_inv_std = Vec::new();
        let mut group_floored = Vec::new();
        let output = if model.is_hidden(i) {
            if let Some(groups) = model.gn_groups {
                let size = pre.len() / groups;
                for chunk in pre.chunks_mut(size) {
                    let n = chunk.len() as f64;
                    let mean = chunk.iter().sum::<f64>() / n;
                    let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    group_floored.push(var <= DEFAULT_EPS);
                    group_inv_std.push(standardize_in_place(chunk, DEFAULT_EPS));
                }
            }
            pre.iter().map(|&v| model.activation.apply(v)).collect()
        } else {
            pre.clone()
        };
        let next = output.clone();
        traces.push(LayerTrace { input, normalized: pre, group_inv_std, group_floored, output });
        input = next;
    }
    traces
}

fn check_input(model: &ModelParams, width: usize) -> Result<()> {
    if width != model.input_dim() {
        return Err(Error::Shape(format!(
            "input width {width} does not match model input dimension {}",
            model.input_dim()
        )));
    }
    Ok(())
}

/// Evaluates the network on every row of `inputs`.
pub fn forward(model: &ModelParams, inputs: &Matrix) -> Result<ForwardOutput> {
    check_input(model, inputs.cols())?;
    let prepared = prepare(model);
    let traces: Vec<Vec<LayerTrace>> = (0..inputs.rows())
        .into_par_iter()
        .map(|r| trace_example(model, &prepared, inputs.row(r)))
        .collect();
    let classes = model.output_dim();
    let mut logits = Vec::with_capacity(inputs.rows() * classes);
    for t in &traces {
        logits.extend_from_slice(&t[t.len() - 1].output);
    }
    Ok(ForwardOutput {
        logits: Matrix::new(inputs.rows(), classes, logits)?,
        cache: ForwardCache { traces },
    })
}

fn logits_only(model: &ModelParams, prepared: &Prepared, x: &[f64]) -> Vec<f64> {
    let mut t = trace_example(model, prepared, x);
    t.pop().map(|l| l.output).unwrap_or_default()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Argmax with the lowest index winning ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub confidences: Matrix,
}

/// Softmax confidences and argmax labels for every input row.
pub fn predict(model: &ModelParams, inputs: &Matrix) -> Result<Predictions> {
    check_input(model, inputs.cols())?;
    let prepared = prepare(model);
    let rows: Vec<Vec<f64>> = (0..inputs.rows())
        .into_par_iter()
        .map(|r| softmax(&logits_only(model, &prepared, inputs.row(r))))
        .collect();
    let labels = rows.iter().map(|c| argmax(c)).collect();
    let confidences = if rows.is_empty() {
        Matrix::zeros(0, model.output_dim())
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(Predictions { labels, confidences })
}

/// Independent sigmoid probabilities per output (multi-label heads).
pub fn predict_attributes(model: &ModelParams, inputs: &Matrix) -> Result<Matrix> {
    check_input(model, inputs.cols())?;
    let prepared = prepare(model);
    let rows: Vec<Vec<f64>> = (0..inputs.rows())
        .into_par_iter()
        .map(|r| logits_only(model, &prepared, inputs.row(r)).into_iter().map(sigmoid).collect())
        .collect();
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, model.output_dim()));
    }
    Matrix::from_rows(&rows)
}

fn check_target(model: &ModelParams, target: &Target) -> Result<()> {
    match target {
        Target::Class(c) if *c >= model.output_dim() => Err(Error::Data(format!(
            "label {c} out of range for {} classes",
            model.output_dim()
        ))),
        Target::Bits(bits) if bits.len() != model.output_dim() => Err(Error::Data(format!(
            "{} attribute bits for {} outputs",
            bits.len(),
            model.output_dim()
        ))),
        _ => Ok(()),
    }
}

/// Loss value and gradient of the loss w.r.t. the logits.
fn loss_and_dlogits(logits: &[f64], target: &Target) -> (f64, Vec<f64>) {
    match target {
        Target::Class(c) => {
            let p = softmax(logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut d = p;
            d[*c] -= 1.0;
            (lse - logits[*c], d)
        }
        Target::Bits(bits) => {
            let mut loss = 0.0;
            let d = logits
                .iter()
                .zip(bits.iter())
                .map(|(&z, &y)| {
                    let y = if y { 1.0 } else { 0.0 };
                    // log(1 + e^z) - y z, written stably.
                    loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    sigmoid(z) - y
                })
                .collect();
            (loss, d)
        }
    }
}

/// Loss of a single example.
pub fn loss(model: &ModelParams, example: &Example) -> Result<f64> {
    check_input(model, example.features.len())?;
    check_target(model, &example.target)?;
    let prepared = prepare(model);
    Ok(loss_and_dlogits(&logits_only(model, &prepared, example.features), &example.target).0)
}

fn backprop(model: &ModelParams, prepared: &Prepared, example: &Example) -> Vec<f64> {
    let traces = trace_example(model, prepared, example.features);
    let last = traces.len() - 1;
    let (_, mut upstream) = loss_and_dlogits(&traces[last].output, &example.target);

    // Flat layout: per layer, row-major weights then bias.
    let mut flat = vec![0.0; model.num_params()];
    let mut offsets = Vec::with_capacity(model.layers.len());
    let mut offset = 0;
    for layer in &model.layers {
        offsets.push(offset);
        offset += layer.weight.len() + layer.bias.len();
    }

    for i in (0..traces.len()).rev() {
        let layer = &model.layers[i];
        let trace = &traces[i];
        let dpre = if model.is_hidden(i) {
            let dnorm: Vec<f64> = upstream
                .iter()
                .zip(&trace.normalized)
                .zip(&trace.output)
                .map(|((g, &x), &y)| g * model.activation.derivative(x, y))
                .collect();
            match model.gn_groups {
                Some(groups) => {
                    let size = dnorm.len() / groups;
                    let mut out = Vec::with_capacity(dnorm.len());
                    for (g, (dn, xn)) in dnorm.chunks(size).zip(trace.normalized.chunks(size)).enumerate() {
                        out.extend(standardize_backward(xn, dn, trace.group_inv_std[g], trace.group_floored[g]));
                    }
                    out
                }
                None => dnorm,
            }
        } else {
            std::mem::take(&mut upstream)
        };

        let w_eff = &prepared.weights[i];
        let (dw, db) = flat[offsets[i]..offsets[i] + layer.weight.len() + layer.bias.len()].split_at_mut(layer.weight.len());
        for (r, d) in dpre.iter().enumerate() {
            if *d != 0.0 {
                for (slot, x) in dw[r * layer.in_dim..(r + 1) * layer.in_dim].iter_mut().zip(&trace.input) {
                    *slot = d * x;
                }
            }
        }
        if i > 0 {
            let mut dx = vec![0.0; layer.in_dim];
            for (r, d) in dpre.iter().enumerate() {
                if *d != 0.0 {
                    for (acc, w) in dx.iter_mut().zip(&w_eff[r * layer.in_dim..(r + 1) * layer.in_dim]) {
                        *acc += d * w;
                    }
                }
            }
            upstream = dx;
        }
        if let Some(stats) = &prepared.ws_stats[i] {
            for (r, (inv, floored)) in stats.iter().enumerate() {
                let span = r * layer.in_dim..(r + 1) * layer.in_dim;
                let raw = standardize_backward(&w_eff[span.clone()], &dw[span.clone()], *inv, *floored);
                dw[span].copy_from_slice(&raw);
            }
        }
        db.copy_from_slice(&dpre);
    }
    flat
}

/// A model prepared once (standardized weights cached) for many gradient
/// evaluations at the same parameters.
pub struct GradientContext<'a> {
    model: &'a ModelParams,
    prepared: Prepared,
}

impl<'a> GradientContext<'a> {
    pub fn new(model: &'a ModelParams) -> Self {
        Self { model, prepared: prepare(model) }
    }

    /// Flat gradient of one example's loss.
    pub fn gradient(&self, example: &Example) -> Result<Vec<f64>> {
        check_input(self.model, example.features.len())?;
        check_target(self.model, &example.target)?;
        Ok(backprop(self.model, &self.prepared, example))
    }
}

/// Gradient of each example's loss w.r.t. the flat parameters.
///
/// Every gradient depends on its own example only; the results are returned
/// in batch order whatever the evaluation order was.
pub fn per_example_gradients(model: &ModelParams, batch: &[Example]) -> Result<GradientSet> {
    if batch.is_empty() {
        return Err(Error::Data("per-example gradients need a non-empty batch".into()));
    }
    for ex in batch {
        check_input(model, ex.features.len())?;
        check_target(model, &ex.target)?;
    }
    let prepared = prepare(model);
    let per_example = batch.par_iter().map(|ex| backprop(model, &prepared, ex)).collect();
    Ok(GradientSet {
        per_example,
        batch_ids: batch.iter().map(|e| e.id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: &[Vec<f64>], bias: Vec<f64>) -> DenseLayer {
        DenseLayer::new(Matrix::from_rows(rows).unwrap(), bias).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ModelParams::new(
            vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(4, 2)],
            Activation::Relu,
            None,
            false,
            0,
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(forward(&m, &x).unwrap().logits.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let m = ModelParams::new(
            vec![DenseLayer::new(Matrix::identity(3), vec![0.0; 3]).unwrap()],
            Activation::Relu,
            None,
            false,
            0,
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        assert_eq!(forward(&m, &x).unwrap().logits.as_slice(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // h = relu([[1,2],[-1,1]] x + [0, 1]) ; y = [[1,-1],[2,0.5]] h + [0.5, 0]
        // x = [1, 2]: pre = [5, 2], h = [5, 2], y = [3.5, 11]
        let m = ModelParams::new(
            vec![
                layer(&[vec![1.0, 2.0], vec![-1.0, 1.0]], vec![0.0, 1.0]),
                layer(&[vec![1.0, -1.0], vec![2.0, 0.5]], vec![0.5, 0.0]),
            ],
            Activation::Relu,
            None,
            false,
            0,
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(forward(&m, &x).unwrap().logits.as_slice(), &[3.5, 11.0]);
    }

    #[test]
    fn shape_errors() {
        let m = ModelParams::init(&Architecture::default_for(4, 3), 1).unwrap();
        let x = Matrix::zeros(2, 5);
        assert!(matches!(forward(&m, &x), Err(Error::Shape(_))));
        assert!(matches!(
            ModelParams::new(vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(5, 2)], Activation::Relu, None, false, 0),
            Err(Error::Shape(_))
        ));
        let mut arch = Architecture::default_for(4, 3);
        arch.gn_groups = Some(5);
        assert!(matches!(ModelParams::init(&arch, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ws_leaves_stored_weights_alone() {
        let mut arch = Architecture::default_for(4, 3);
        arch.ws_enabled = true;
        let m = ModelParams::init(&arch, 3).unwrap();
        let before = m.clone();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let a = forward(&m, &x).unwrap();
        assert_eq!(m, before);
        let mut plain = m.clone();
        plain.ws_enabled = false;
        assert_ne!(a.logits, forward(&plain, &x).unwrap().logits);
    }

    #[test]
    fn predict_fixtures() {
        let m = ModelParams::new(vec![DenseLayer::zeros(2, 4)], Activation::Relu, None, false, 0).unwrap();
        let p = predict(&m, &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(p.confidences.row(0), &[0.25; 4]);
        assert_eq!(p.labels, vec![0]);

        let c = softmax(&[0.0, 3f64.ln()]);
        assert!((c[0] - 0.25).abs() < 1e-15 && (c[1] - 0.75).abs() < 1e-15);
        let shifted = softmax(&[100.0, 100.0 + 3f64.ln()]);
        assert!((shifted[1] - c[1]).abs() < 1e-12);
    }

    #[test]
    fn duplicated_example_yields_identical_gradients() {
        let m = ModelParams::init(&Architecture::default_for(3, 2), 5).unwrap();
        let f = [0.3, -0.7, 1.1];
        let ex = Example { id: 1, features: &f, target: Target::Class(1) };
        let g = per_example_gradients(&m, &[ex, ex]).unwrap();
        assert_eq!(g.per_example[0], g.per_example[1]);
        assert_eq!(g.per_example[0].len(), m.num_params());
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_gradient() {
        let m = ModelParams::new(
            vec![layer(&[vec![50.0, 0.0], vec![-50.0, 0.0]], vec![0.0, 0.0])],
            Activation::Relu,
            None,
            false,
            0,
        )
        .unwrap();
        let f = [1.0, 0.0];
        let g = per_example_gradients(&m, &[Example { id: 0, features: &f, target: Target::Class(0) }]).unwrap();
        let norm = g.per_example[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-30, "{norm}");
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let m = ModelParams::init(&Architecture::default_for(2, 2), 0).unwrap();
        let f = [0.0, 0.0];
        let r = per_example_gradients(&m, &[Example { id: 0, features: &f, target: Target::Class(2) }]);
        assert!(matches!(r, Err(Error::Data(_))));
        assert!(matches!(per_example_gradients(&m, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn flat_round_trip() {
        let m = ModelParams::init(&Architecture::default_for(5, 3), 9).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), m.num_params());
        assert_eq!(m.with_flat(&flat).unwrap(), m);
        assert!(m.with_flat(&flat[1..]).is_err());
    }
}
