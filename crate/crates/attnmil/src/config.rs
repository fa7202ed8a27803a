//! Experiment settings: defaults, flat key=value config files and the
//! resolved-config echo written into every output directory. Precedence
//! is command-line flag > config file > default.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{CrossvalOptions, SizePolicy};
use crate::models::{Method, Pooling, TrainConfig};

/// Every effective knob of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub method: Method,
    pub folds: usize,
    pub repetitions: usize,
    pub oversample: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub pad_duplicate: bool,
    pub pad_target: usize,
    pub standardize: bool,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    pub size_policy: SizePolicy,
    pub svm_lambda: f64,
    pub svm_inner_epochs: usize,
    pub svm_outer_iters: usize,
    pub calibration_bins: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            method: Method::AttentionMil,
            folds: 5,
            repetitions: 20,
            oversample: 60,
            seed: 0,
            epochs: 500,
            learning_rate: 1e-4,
            pad_duplicate: false,
            pad_target: 12,
            standardize: true,
            hidden_dims: vec![64, 32],
            embed_dim: 32,
            attention_dim: 16,
            dropout: 0.5,
            pooling: Pooling::Max,
            size_policy: SizePolicy::Empirical,
            svm_lambda: 0.01,
            svm_inner_epochs: 200,
            svm_outer_iters: 20,
            calibration_bins: 10,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: bad boolean {value:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: bad value {value:?}")))
}

impl Settings {
    /// Applies one `key=value` pair; unknown keys are contract errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "method" => {
                self.method = Method::from_name(value)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown method {value:?}")))?
            }
            "folds" => self.folds = parse_num(key, value)?,
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "oversample" => self.oversample = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "lr" => self.learning_rate = parse_num(key, value)?,
            "pad_duplicate" => self.pad_duplicate = parse_bool(key, value)?,
            "pad_target" => self.pad_target = parse_num(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "hidden_dims" => {
                self.hidden_dims = value
                    .split('+')
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num("hidden_dims", s))
                    .collect::<Result<_>>()?
            }
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "attention_dim" => self.attention_dim = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "pooling" => {
                self.pooling = Pooling::from_name(value)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown pooling {value:?}")))?
            }
            "size_policy" => {
                self.size_policy = match value {
                    "empirical" => SizePolicy::Empirical,
                    "uniform" => SizePolicy::Uniform,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown size_policy {value:?}"
                        )))
                    }
                }
            }
            "svm_lambda" => self.svm_lambda = parse_num(key, value)?,
            "svm_inner_epochs" => self.svm_inner_epochs = parse_num(key, value)?,
            "svm_outer_iters" => self.svm_outer_iters = parse_num(key, value)?,
            "calibration_bins" => self.calibration_bins = parse_num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Loads `key=value` lines ('#' starts a comment) on top of the
    /// current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got {raw:?}"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Flat key=value dump of every effective setting, sufficient to
    /// reproduce the run.
    pub fn render_resolved(&self) -> String {
        let hidden = self
            .hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("+");
        let size_policy = match self.size_policy {
            SizePolicy::Empirical => "empirical",
            SizePolicy::Uniform => "uniform",
        };
        format!(
            "method={}\nfolds={}\nrepetitions={}\noversample={}\nseed={}\nepochs={}\nlr={}\n\
             pad_duplicate={}\npad_target={}\nstandardize={}\nhidden_dims={}\nembed_dim={}\n\
             attention_dim={}\ndropout={}\npooling={}\nsize_policy={}\nsvm_lambda={}\n\
             svm_inner_epochs={}\nsvm_outer_iters={}\ncalibration_bins={}\n",
            self.method.name(),
            self.folds,
            self.repetitions,
            self.oversample,
            self.seed,
            self.epochs,
            self.learning_rate,
            self.pad_duplicate,
            self.pad_target,
            self.standardize,
            hidden,
            self.embed_dim,
            self.attention_dim,
            self.dropout,
            self.pooling.name(),
            size_policy,
            self.svm_lambda,
            self.svm_inner_epochs,
            self.svm_outer_iters,
            self.calibration_bins,
        )
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            oversample_count: self.oversample,
            pad_duplicate: self.pad_duplicate,
            pad_target: self.pad_target,
            standardize: self.standardize,
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim,
            attention_dim: self.attention_dim,
            dropout_rate: self.dropout,
            minet_pooling: self.pooling,
            svm_lambda: self.svm_lambda,
            svm_inner_epochs: self.svm_inner_epochs,
            svm_max_outer_iters: self.svm_outer_iters,
        }
    }

    pub fn to_crossval_options(&self) -> CrossvalOptions {
        CrossvalOptions {
            repetitions: self.repetitions,
            k: self.folds,
            master_seed: self.seed,
            size_policy: self.size_policy,
        }
    }
}

/// Writes a file atomically: content goes to `<path>.tmp`, then a rename
/// replaces the target.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, content).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}
