//! Desk-scale laboratory for the privacy / utility / fairness trade-off of
//! small classifiers.
//!
//! The crate trains dense networks with plain SGD, sharpness-aware training,
//! DP-SGD and DP-SAT, attacks them with four black-box membership-inference
//! attacks and scores them with bias metrics and the harmonic score.
//!
//! Module map:
//!
//! * [`nnkit`]: dense classifier with per-example gradients, group
//!   normalization and weight standardization.
//! * [`optim`]: clipping, augmentation multiplicity, SGD / SAT / DP-SGD /
//!   DP-SAT steps, EMA averaging and the training loop.
//! * [`privacy`]: Rényi-DP accountant for the subsampled Gaussian mechanism.
//! * [`data`]: synthetic skewed and group-imbalanced datasets, CSV I/O.
//! * [`attacks`]: threshold, entropy and shadow-model attacks, random forest.
//! * [`metrics`]: bias metrics, harmonic score, generalization gap, weighted AP.
//! * [`onion`]: iterative removal of the most exposed training samples.
//! * [`harness`]: configuration, end-to-end runs, sweeps and tracking.

pub mod attacks;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nnkit;
pub mod onion;
pub mod optim;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
