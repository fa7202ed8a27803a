use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by dataset loading, training and evaluation.
///
/// Variants are split between contract violations (bad inputs, malformed
/// files, invalid configurations) and internal/IO failures so the CLI can
/// map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse: {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bag {bag_id}: conflicting labels across its rows")]
    ConflictingLabels { bag_id: String },
    #[error("dataset contains no instances")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bag {bag_id} is empty")]
    EmptyBag { bag_id: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set has no {missing} bags")]
    SingleClass { missing: &'static str },
    #[error("class {label} has {count} bags, fewer than k = {k}")]
    TooFewBagsForFolds { label: u8, count: usize, k: usize },
    #[error("oversampling requested but no negative bags in training set")]
    NoNegativePool,
    #[error("paired input lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("reports are not paired runs: {0}")]
    UnpairedReports(String),
    #[error("model file {path}: {message}")]
    ModelFormat { path: PathBuf, message: String },
}

impl Error {
    /// True for violations of an input contract; these map to exit code
    /// 2 in the CLI. I/O failures count too: they stem from caller-given
    /// paths (missing dataset, unwritable output directory).
    pub fn is_contract(&self) -> bool {
        true
    }
}

pub type Result<T> = std::result::Result<T, Error>;
