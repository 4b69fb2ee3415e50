use super::Matrix;
use crate::{Error, Result};

/// Variance floor used by both normalizations unless configured otherwise.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Standardizes `x` in place to zero mean and unit variance, flooring the
/// variance at `eps`. Returns the reciprocal of the standard deviation used.
pub(crate) fn standardize_in_place(x: &mut [f64], eps: f64) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / var.max(eps).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) * inv_std;
    }
    inv_std
}

/// Backward pass of [`standardize_in_place`]. `normalized` is the forward
/// output, `grad` the upstream gradient; returns the gradient w.r.t. the
/// raw input. When the variance was floored the scale is a constant and the
/// projection term drops out.
pub(crate) fn standardize_backward(normalized: &[f64], grad: &[f64], inv_std: f64, floored: bool) -> Vec<f64> {
    let n = normalized.len() as f64;
    let mean_g = grad.iter().sum::<f64>() / n;
    let mean_gx = if floored {
        0.0
    } else {
        grad.iter().zip(normalized).map(|(g, x)| g * x).sum::<f64>() / n
    };
    grad.iter()
        .zip(normalized)
        .map(|(g, x)| inv_std * (g - mean_g - x * mean_gx))
        .collect()
}

pub(crate) fn check_groups(width: usize, groups: usize) -> Result<()> {
    if groups == 0 || width % groups != 0 {
        return Err(Error::Config(format!(
            "width {width} is not divisible into {groups} normalization groups"
        )));
    }
    Ok(())
}

/// Group normalization over the columns of each row independently.
///
/// Each row is split into `groups` contiguous blocks that are standardized
/// separately; no statistic is shared between rows.
pub fn group_normalize(activations: &Matrix, groups: usize, eps: f64) -> Result<Matrix> {
    check_groups(activations.cols(), groups)?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("normalization eps must be positive, got {eps}")));
    }
    let mut out = activations.clone();
    let size = activations.cols() / groups;
    for r in 0..out.rows() {
        for chunk in out.row_mut(r).chunks_mut(size) {
            standardize_in_place(chunk, eps);
        }
    }
    Ok(out)
}

/// Row-wise weight standardization: every output row gets mean 0 and unit
/// variance (floored at `eps`). The input is left untouched.
pub fn weight_standardize(weight: &Matrix, eps: f64) -> Result<Matrix> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("normalization eps must be positive, got {eps}")));
    }
    if weight.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite weight".into()));
    }
    let mut out = weight.clone();
    if out.cols() > 0 {
        for r in 0..out.rows() {
            standardize_in_place(out.row_mut(r), eps);
        }
    }
    Ok(out)
}
