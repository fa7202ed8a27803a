//! Attention-based deep MIL: a shared transformation network embeds each
//! instance, attention pooling aggregates the embeddings into one bag
//! embedding, and a sigmoid head produces the bag probability. The
//! attention weights are the per-instance interpretability output.
//!
//! Pooling: `score_k = w . tanh(V h_k)`, `alpha = softmax(scores)`,
//! `z = sum_k alpha_k h_k`.

use crate::dataset::{Bag, Label};
use crate::error::{Error, Result};
use crate::nncore::{
    sgd_step, sgd_step_slice, Activation, DenseLayer, GradientTape, LayerStack, Mat, Mode,
    StackGrads,
};
use crate::rng::Rng;

use super::trainer::{bce_loss, train_bag_model, Trainable};
use super::TrainConfig;

/// Attention pooling parameters: hidden transform V (L x M) and
/// projection w (L).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub v: Mat,
    pub w: Vec<f64>,
}

impl AttentionParams {
    pub fn init(attention_dim: usize, embed_dim: usize, rng: &mut Rng) -> Self {
        let v = Mat::glorot(attention_dim, embed_dim, rng);
        let bound = (6.0 / (attention_dim + 1) as f64).sqrt();
        let w = (0..attention_dim).map(|_| rng.next_uniform_sym(bound)).collect();
        AttentionParams { v, w }
    }

    pub fn embed_dim(&self) -> usize {
        self.v.cols
    }
}

/// Per-bag attention weights, one per instance slot, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    pub bag_id: String,
    pub weights: Vec<f64>,
    pub padding: Vec<bool>,
}

/// The full model: shared instance transform, attention pooling, sigmoid
/// head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMilModel {
    pub transform: LayerStack,
    pub attention: AttentionParams,
    pub head: DenseLayer,
}

impl AttentionMilModel {
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
        let attention = AttentionParams::init(cfg.attention_dim, cfg.embed_dim, rng);
        let head = DenseLayer::init(cfg.embed_dim, 1, Activation::Sigmoid, 0.0, rng)?;
        Ok(AttentionMilModel {
            transform,
            attention,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.transform.in_dim()
    }
}

pub(crate) struct PoolTape {
    embeddings: Vec<Vec<f64>>,
    tanh_vh: Vec<Vec<f64>>, // tanh(V h_k) per instance
    alphas: Vec<f64>,
}

/// Softmax-normalized attention pooling. Returns the alpha-weighted sum
/// of the embeddings and the weights themselves.
pub fn attention_pool(
    embeddings: &[Vec<f64>],
    params: &AttentionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (z, tape) = attention_pool_tape(embeddings, params)?;
    Ok((z, tape.alphas))
}

fn attention_pool_tape(
    embeddings: &[Vec<f64>],
    params: &AttentionParams,
) -> Result<(Vec<f64>, PoolTape)> {
    if embeddings.is_empty() {
        return Err(Error::EmptyBag {
            bag_id: "<pool>".into(),
        });
    }
    let m = params.embed_dim();
    let mut scores = Vec::with_capacity(embeddings.len());
    let mut tanh_vh = Vec::with_capacity(embeddings.len());
    for h in embeddings {
        if h.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: h.len(),
            });
        }
        let t: Vec<f64> = params.v.matvec(h).iter().map(|s| s.tanh()).collect();
        scores.push(params.w.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>());
        tanh_vh.push(t);
    }
    // softmax with max subtraction
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alphas: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut z = vec![0.0; m];
    for (alpha, h) in alphas.iter().zip(embeddings) {
        for (zv, hv) in z.iter_mut().zip(h) {
            *zv += alpha * hv;
        }
    }
    Ok((
        z,
        PoolTape {
            embeddings: embeddings.to_vec(),
            tanh_vh,
            alphas,
        },
    ))
}

pub(crate) struct AttnMilTape {
    instance_tapes: Vec<GradientTape>,
    pool: PoolTape,
    bag_embedding: Vec<f64>,
    probability: f64,
}

/// Gradients for every parameter of an attention-MIL model.
pub struct AttnMilGrads {
    pub transform: StackGrads,
    pub v: Mat,
    pub w: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl AttnMilGrads {
    fn zeros_like(model: &AttentionMilModel) -> Self {
        AttnMilGrads {
            transform: StackGrads::zeros_like(&model.transform),
            v: Mat::zeros(model.attention.v.rows, model.attention.v.cols),
            w: vec![0.0; model.attention.w.len()],
            head_w: vec![0.0; model.head.in_dim()],
            head_b: 0.0,
        }
    }
}

/// Forward pass over a bag: every instance goes through the shared
/// transformation network, attention pooling aggregates, the sigmoid
/// head yields the bag probability.
pub fn attn_mil_forward(
    model: &AttentionMilModel,
    bag: &Bag,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, AttentionReport)> {
    let (p, tape) = forward_tape(model, bag, mode, rng)?;
    Ok((
        p,
        AttentionReport {
            bag_id: bag.bag_id.clone(),
            weights: tape.pool.alphas,
            padding: bag.padding.clone(),
        },
    ))
}

fn forward_tape(
    model: &AttentionMilModel,
    bag: &Bag,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, AttnMilTape)> {
    if bag.is_empty() {
        return Err(Error::EmptyBag {
            bag_id: bag.bag_id.clone(),
        });
    }
    let mut embeddings = Vec::with_capacity(bag.len());
    let mut instance_tapes = Vec::with_capacity(bag.len());
    for inst in &bag.instances {
        let (h, tape) = model.transform.forward(&inst.features, mode, rng)?;
        embeddings.push(h);
        instance_tapes.push(tape);
    }
    let (z, pool) = attention_pool_tape(&embeddings, &model.attention)?;
    let u = model.head.weights.matvec(&z)[0] + model.head.biases[0];
    let p = model.head.activation.apply(u);
    Ok((
        p,
        AttnMilTape {
            instance_tapes,
            pool,
            bag_embedding: z,
            probability: p,
        },
    ))
}

fn backward_tape(
    model: &AttentionMilModel,
    tape: &AttnMilTape,
    loss_grad: f64,
) -> Result<AttnMilGrads> {
    let mut grads = AttnMilGrads::zeros_like(model);
    let p = tape.probability;
    // sigmoid head
    let du = loss_grad * p * (1.0 - p);
    for (g, &zv) in grads.head_w.iter_mut().zip(&tape.bag_embedding) {
        *g = du * zv;
    }
    grads.head_b = du;
    let dz: Vec<f64> = (0..tape.bag_embedding.len())
        .map(|i| du * model.head.weights.at(0, i))
        .collect();

    // attention pooling
    let pool = &tape.pool;
    let k = pool.embeddings.len();
    let dalpha: Vec<f64> = pool
        .embeddings
        .iter()
        .map(|h| dz.iter().zip(h).map(|(a, b)| a * b).sum())
        .collect();
    let weighted: f64 = pool.alphas.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let dscore: Vec<f64> = (0..k).map(|j| pool.alphas[j] * (dalpha[j] - weighted)).collect();

    for j in 0..k {
        let t = &pool.tanh_vh[j];
        let h = &pool.embeddings[j];
        // w gradient and tanh backprop
        let mut ds = vec![0.0; t.len()];
        for (l, (&tv, ds_l)) in t.iter().zip(ds.iter_mut()).enumerate() {
            grads.w[l] += dscore[j] * tv;
            *ds_l = dscore[j] * model.attention.w[l] * (1.0 - tv * tv);
        }
        grads.v.add_outer(&ds, h, 1.0);
        // instance embedding gradient: attention term + pooling term
        let mut dh = model.attention.v.matvec_t(&ds);
        for (dhv, &dzv) in dh.iter_mut().zip(&dz) {
            *dhv += pool.alphas[j] * dzv;
        }
        model
            .transform
            .backward_into(&tape.instance_tapes[j], &mut dh, &mut grads.transform)?;
    }
    Ok(grads)
}

impl Trainable for AttentionMilModel {
    type Tape = AttnMilTape;
    type Grads = AttnMilGrads;

    fn forward_train(&self, bag: &Bag, rng: &mut Rng) -> Result<(f64, AttnMilTape)> {
        forward_tape(self, bag, Mode::Train, rng)
    }

    fn backward(&self, tape: &AttnMilTape, loss_grad: f64) -> Result<AttnMilGrads> {
        backward_tape(self, tape, loss_grad)
    }

    fn apply_grads(&mut self, grads: &AttnMilGrads, learning_rate: f64) {
        sgd_step(&mut self.transform, &grads.transform, learning_rate).expect("matching shapes");
        sgd_step_slice(&mut self.attention.v.data, &grads.v.data, learning_rate);
        sgd_step_slice(&mut self.attention.w, &grads.w, learning_rate);
        sgd_step_slice(&mut self.head.weights.data, &grads.head_w, learning_rate);
        self.head.biases[0] -= learning_rate * grads.head_b;
    }
}

/// Trains a fresh attention-MIL model with per-bag SGD. Deterministic in
/// `config.seed`. Returns the model and the mean loss per epoch.
pub fn train_attention_mil(
    train_bags: &[Bag],
    config: &TrainConfig,
) -> Result<(AttentionMilModel, Vec<f64>)> {
    config.validate()?;
    let feature_dim = train_bags
        .first()
        .and_then(|b| b.instances.first())
        .map(|i| i.dim())
        .ok_or(Error::EmptyDataset)?;
    let mut rng = Rng::from_seed(config.seed);
    let mut model = AttentionMilModel::init(feature_dim, config, &mut rng)?;
    let log = train_bag_model(
        &mut model,
        train_bags,
        config.epochs,
        config.learning_rate,
        &mut rng,
    )?;
    Ok((model, log))
}

/// Infer-mode scoring: probability, thresholded label (1 iff p >= 0.5)
/// and the attention report.
pub fn predict_bag(model: &AttentionMilModel, bag: &Bag) -> Result<(f64, u8, AttentionReport)> {
    let mut rng = Rng::from_seed(0); // unused in infer mode
    let (p, report) = attn_mil_forward(model, bag, Mode::Infer, &mut rng)?;
    Ok((p, (p >= 0.5) as u8, report))
}

/// BCE loss of one bag and its analytic gradient in [`flatten_params`]
/// order, computed without dropout. Pairs with numerical gradient
/// checking.
///
/// [`flatten_params`]: AttentionMilModel::flatten_params
pub fn bag_loss_gradient(
    model: &AttentionMilModel,
    bag: &Bag,
    label: Label,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = Rng::from_seed(0); // unused in infer mode
    let (p, tape) = forward_tape(model, bag, Mode::Infer, &mut rng)?;
    let (loss, loss_grad) = bce_loss(p, label.as_u8());
    let grads = backward_tape(model, &tape, loss_grad)?;
    Ok((loss, grads.flatten()))
}

// Flattened parameter access, used by persistence and gradient checking.
impl AttentionMilModel {
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.transform.layers {
            out.extend_from_slice(&layer.weights.data);
            out.extend_from_slice(&layer.biases);
        }
        out.extend_from_slice(&self.attention.v.data);
        out.extend_from_slice(&self.attention.w);
        out.extend_from_slice(&self.head.weights.data);
        out.extend_from_slice(&self.head.biases);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &params[off..off + n];
            off += n;
            s
        };
        for layer in &mut self.transform.layers {
            let n = layer.weights.data.len();
            layer.weights.data.copy_from_slice(take(n));
            let n = layer.biases.len();
            layer.biases.copy_from_slice(take(n));
        }
        let n = self.attention.v.data.len();
        self.attention.v.data.copy_from_slice(take(n));
        let n = self.attention.w.len();
        self.attention.w.copy_from_slice(take(n));
        let n = self.head.weights.data.len();
        self.head.weights.data.copy_from_slice(take(n));
        self.head.biases.copy_from_slice(take(1));
        assert_eq!(off, params.len());
    }
}

impl AttnMilGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.transform.weights.iter().zip(&self.transform.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.v.data);
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }
}
