//! Bag classifiers: attention-based deep MIL, MI-Net (max/mean pooling)
//! and MI-SVM with witness alternation.

mod attention;
mod minet;
mod misvm;
mod trainer;

pub use attention::{
    attention_pool, attn_mil_forward, bag_loss_gradient, predict_bag, train_attention_mil,
    AttentionMilModel, AttentionParams, AttentionReport,
};
pub use minet::{minet_forward, predict_minet, train_minet, MiNetModel, Pooling};
pub use misvm::{misvm_score, train_misvm, MiSvmModel};
pub use trainer::bce_loss;

use crate::error::{Error, Result};

/// Training hyperparameters. Defaults mirror the experimental protocol:
/// learning rate 1e-4, 500 epochs, batch size 1, duplication padding and
/// oversampling off.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Number of synthetic negative training bags (S); used by the
    /// cross-validation driver, not by the training loop itself.
    pub oversample_count: usize,
    /// Duplication-pad every bag to `pad_target` slots before training.
    pub pad_duplicate: bool,
    pub pad_target: usize,
    pub standardize: bool,
    /// Hidden widths of the instance transformation network.
    pub hidden_dims: Vec<usize>,
    /// Instance embedding width M (output of the transformation network).
    pub embed_dim: usize,
    /// Attention hidden width L.
    pub attention_dim: usize,
    pub dropout_rate: f64,
    pub minet_pooling: Pooling,
    pub svm_lambda: f64,
    pub svm_inner_epochs: usize,
    pub svm_max_outer_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 500,
            seed: 0,
            oversample_count: 0,
            pad_duplicate: false,
            pad_target: 12,
            standardize: true,
            hidden_dims: vec![64, 32],
            embed_dim: 32,
            attention_dim: 16,
            dropout_rate: 0.5,
            minet_pooling: Pooling::Max,
            svm_lambda: 0.01,
            svm_inner_epochs: 200,
            svm_max_outer_iters: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate outside [0, 1)".into()));
        }
        if self.embed_dim == 0 || self.attention_dim == 0 {
            return Err(Error::InvalidConfig("model widths must be positive".into()));
        }
        if self.svm_lambda <= 0.0 {
            return Err(Error::InvalidConfig("svm_lambda must be > 0".into()));
        }
        Ok(())
    }
}

/// Which classifier a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    AttentionMil,
    MiNet,
    MiSvm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AttentionMil => "attention_mil",
            Method::MiNet => "mi_net",
            Method::MiSvm => "mi_svm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "attention_mil" => Some(Method::AttentionMil),
            "mi_net" => Some(Method::MiNet),
            "mi_svm" => Some(Method::MiSvm),
            _ => None,
        }
    }
}
