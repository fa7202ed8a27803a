//! Bag-level classification toolkit for multiple instance learning on
//! radiomics-style feature vectors. An attention-pooled neural model
//! exposes per-instance weights for interpretability, MI-Net and MI-SVM
//! serve as baselines, negative-bag oversampling addresses class
//! imbalance, and a seeded cross-validation harness produces metric
//! reports with SEM aggregation and Wilcoxon comparisons.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod models;
pub mod nncore;
pub mod persist;
pub mod rng;

pub use error::{Error, Result};
