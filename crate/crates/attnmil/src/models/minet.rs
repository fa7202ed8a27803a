//! MI-Net baseline: per-instance embeddings pooled elementwise by max or
//! mean, then a sigmoid head. Shares the transformation network shape
//! and the training loop with the attention model.

use crate::dataset::Bag;
use crate::error::{Error, Result};
use crate::nncore::{
    sgd_step, sgd_step_slice, Activation, DenseLayer, GradientTape, LayerStack, Mode, StackGrads,
};
use crate::rng::Rng;

use super::trainer::{train_bag_model, Trainable};
use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "max" => Some(Pooling::Max),
            "mean" => Some(Pooling::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiNetModel {
    pub transform: LayerStack,
    pub head: DenseLayer,
    pub pooling: Pooling,
}

impl MiNetModel {
    pub fn init(feature_dim: usize, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![feature_dim];
        dims.extend_from_slice(&cfg.hidden_dims);
        dims.push(cfg.embed_dim);
        let n_layers = dims.len() - 1;
        let mut activations = vec![Activation::Relu; n_layers];
        activations[n_layers - 1] = Activation::Identity;
        let mut dropouts = vec![cfg.dropout_rate; n_layers];
        dropouts[n_layers - 1] = 0.0;
        let transform = LayerStack::init(&dims, &activations, &dropouts, rng)?;
        let head = DenseLayer::init(cfg.embed_dim, 1, Activation::Sigmoid, 0.0, rng)?;
        Ok(MiNetModel {
            transform,
            head,
            pooling: cfg.minet_pooling,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.transform.in_dim()
    }
}

pub struct MiNetTape {
    instance_tapes: Vec<GradientTape>,
    pooled: Vec<f64>,
    /// For max pooling: which instance supplied each pooled dimension.
    argmax: Option<Vec<usize>>,
    n_instances: usize,
    probability: f64,
}

pub struct MiNetGrads {
    pub transform: StackGrads,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

/// Forward pass: embed each instance, pool elementwise, apply the
/// sigmoid head.
pub fn minet_forward(model: &MiNetModel, bag: &Bag, mode: Mode, rng: &mut Rng) -> Result<f64> {
    forward_tape(model, bag, mode, rng).map(|(p, _)| p)
}

fn forward_tape(
    model: &MiNetModel,
    bag: &Bag,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, MiNetTape)> {
    if bag.is_empty() {
        return Err(Error::EmptyBag {
            bag_id: bag.bag_id.clone(),
        });
    }
    let m = model.transform.out_dim();
    let mut instance_tapes = Vec::with_capacity(bag.len());
    let mut embeddings = Vec::with_capacity(bag.len());
    for inst in &bag.instances {
        let (h, tape) = model.transform.forward(&inst.features, mode, rng)?;
        embeddings.push(h);
        instance_tapes.push(tape);
    }
    let (pooled, argmax) = match model.pooling {
        Pooling::Max => {
            let mut pooled = embeddings[0].clone();
            let mut argmax = vec![0usize; m];
            for (k, h) in embeddings.iter().enumerate().skip(1) {
                for (d, &v) in h.iter().enumerate() {
                    if v > pooled[d] {
                        pooled[d] = v;
                        argmax[d] = k;
                    }
                }
            }
            (pooled, Some(argmax))
        }
        Pooling::Mean => {
            let mut pooled = vec![0.0; m];
            for h in &embeddings {
                for (p, &v) in pooled.iter_mut().zip(h) {
                    *p += v;
                }
            }
            let k = embeddings.len() as f64;
            for p in &mut pooled {
                *p /= k;
            }
            (pooled, None)
        }
    };
    let u = model.head.weights.matvec(&pooled)[0] + model.head.biases[0];
    let p = model.head.activation.apply(u);
    Ok((
        p,
        MiNetTape {
            instance_tapes,
            pooled,
            argmax,
            n_instances: bag.len(),
            probability: p,
        },
    ))
}

fn backward_tape(model: &MiNetModel, tape: &MiNetTape, loss_grad: f64) -> Result<MiNetGrads> {
    let mut grads = MiNetGrads {
        transform: StackGrads::zeros_like(&model.transform),
        head_w: vec![0.0; model.head.in_dim()],
        head_b: 0.0,
    };
    let p = tape.probability;
    let du = loss_grad * p * (1.0 - p);
    for (g, &zv) in grads.head_w.iter_mut().zip(&tape.pooled) {
        *g = du * zv;
    }
    grads.head_b = du;
    let m = tape.pooled.len();
    let dpooled: Vec<f64> = (0..m).map(|i| du * model.head.weights.at(0, i)).collect();
    match &tape.argmax {
        Some(argmax) => {
            // route each pooled dimension's gradient to its source instance
            let mut per_instance = vec![vec![0.0; m]; tape.n_instances];
            for (d, &src) in argmax.iter().enumerate() {
                per_instance[src][d] = dpooled[d];
            }
            for (k, mut dh) in per_instance.into_iter().enumerate() {
                model
                    .transform
                    .backward_into(&tape.instance_tapes[k], &mut dh, &mut grads.transform)?;
            }
        }
        None => {
            let scale = 1.0 / tape.n_instances as f64;
            for k in 0..tape.n_instances {
                let mut dh: Vec<f64> = dpooled.iter().map(|g| g * scale).collect();
                model
                    .transform
                    .backward_into(&tape.instance_tapes[k], &mut dh, &mut grads.transform)?;
            }
        }
    }
    Ok(grads)
}

impl Trainable for MiNetModel {
    type Tape = MiNetTape;
    type Grads = MiNetGrads;

    fn forward_train(&self, bag: &Bag, rng: &mut Rng) -> Result<(f64, MiNetTape)> {
        forward_tape(self, bag, Mode::Train, rng)
    }

    fn backward(&self, tape: &MiNetTape, loss_grad: f64) -> Result<MiNetGrads> {
        backward_tape(self, tape, loss_grad)
    }

    fn apply_grads(&mut self, grads: &MiNetGrads, learning_rate: f64) {
        sgd_step(&mut self.transform, &grads.transform, learning_rate).expect("matching shapes");
        sgd_step_slice(&mut self.head.weights.data, &grads.head_w, learning_rate);
        self.head.biases[0] -= learning_rate * grads.head_b;
    }
}

/// Trains a fresh MI-Net model, same loop as the attention model.
pub fn train_minet(train_bags: &[Bag], config: &TrainConfig) -> Result<(MiNetModel, Vec<f64>)> {
    config.validate()?;
    let feature_dim = train_bags
        .first()
        .and_then(|b| b.instances.first())
        .map(|i| i.dim())
        .ok_or(crate::error::Error::EmptyDataset)?;
    let mut rng = Rng::from_seed(config.seed);
    let mut model = MiNetModel::init(feature_dim, config, &mut rng)?;
    let log = train_bag_model(
        &mut model,
        train_bags,
        config.epochs,
        config.learning_rate,
        &mut rng,
    )?;
    Ok((model, log))
}

pub fn predict_minet(model: &MiNetModel, bag: &Bag) -> Result<(f64, u8)> {
    let mut rng = Rng::from_seed(0);
    let p = minet_forward(model, bag, Mode::Infer, &mut rng)?;
    Ok((p, (p >= 0.5) as u8))
}

// Flattened parameter access for persistence.
impl MiNetModel {
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.transform.layers {
            out.extend_from_slice(&layer.weights.data);
            out.extend_from_slice(&layer.biases);
        }
        out.extend_from_slice(&self.head.weights.data);
        out.extend_from_slice(&self.head.biases);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut off = 0;
        for layer in &mut self.transform.layers {
            let n = layer.weights.data.len();
            layer.weights.data.copy_from_slice(&params[off..off + n]);
            off += n;
            let n = layer.biases.len();
            layer.biases.copy_from_slice(&params[off..off + n]);
            off += n;
        }
        let n = self.head.weights.data.len();
        self.head.weights.data.copy_from_slice(&params[off..off + n]);
        off += n;
        self.head.biases.copy_from_slice(&params[off..off + 1]);
        off += 1;
        assert_eq!(off, params.len());
    }
}
