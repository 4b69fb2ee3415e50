//! Minimal dense feed-forward classifier with manual backpropagation.
//!
//! Hidden layers compute `act(GN(W x + b))`, where group normalization is
//! optional and `W` is replaced by its row-standardized copy when weight
//! standardization is enabled. The readout layer is a plain affine map.
//! Gradients are produced one example at a time so that every example's
//! contribution can be clipped independently.

mod checkpoint;
mod matrix;
mod network;
mod norm;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use matrix::Matrix;
pub use network::{
    forward, loss, per_example_gradients, predict, predict_attributes, softmax, Activation,
    Architecture, DenseLayer, Example, ForwardCache, ForwardOutput, GradientContext, GradientSet,
    ModelParams,
    Predictions, Target,
};
pub use norm::{group_normalize, weight_standardize, DEFAULT_EPS};
