//! Minimal feed-forward engine: dense layers with activations and
//! inverted dropout, tape-based reverse-mode gradients, plain SGD and a
//! finite-difference gradient checker. Everything is f64 and
//! deterministic given the seed.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Glorot-uniform: entries uniform on ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.next_uniform_sym(bound)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xr = x[r];
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += a * xr;
            }
        }
        y
    }

    /// self += scale * (u v^T)
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            let ur = scale * u[r];
            for (a, b) in row.iter_mut().zip(v) {
                *a += ur * b;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through pre-activation z and activation value a.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One fully connected layer: affine map, activation, optional dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Mat, // out_dim x in_dim
    pub biases: Vec<f64>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl DenseLayer {
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        Ok(DenseLayer {
            weights: Mat::glorot(out_dim, in_dim, rng),
            biases: vec![0.0; out_dim],
            activation,
            dropout_rate,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }
}

/// Ordered dense layers, dimension-compatible end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer forward records needed for the backward pass: the layer
/// input, pre-activation, activation (before dropout) and the dropout
/// keep mask of the recorded pass.
#[derive(Debug, Clone)]
struct LayerTape {
    input: Vec<f64>,
    preact: Vec<f64>,
    act: Vec<f64>,
    mask: Option<Vec<bool>>, // None when no dropout was applied
}

/// Cached activations sufficient to reproduce exact gradients of the
/// recorded forward pass.
#[derive(Debug, Clone)]
pub struct GradientTape {
    layers: Vec<LayerTape>,
}

/// Per-parameter gradients mirroring a stack's shapes.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl StackGrads {
    pub fn zeros_like(stack: &LayerStack) -> Self {
        StackGrads {
            weights: stack
                .layers
                .iter()
                .map(|l| Mat::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: stack.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }
}

impl LayerStack {
    /// Builds a stack from `dims = [in, h1, ..., out]` with one
    /// activation and dropout rate per layer. Glorot-uniform weights,
    /// zero biases, deterministic in `rng`.
    pub fn init(
        dims: &[usize],
        activations: &[Activation],
        dropout_rates: &[f64],
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("need at least one layer".into()));
        }
        let n_layers = dims.len() - 1;
        if activations.len() != n_layers || dropout_rates.len() != n_layers {
            return Err(Error::InvalidConfig(
                "activations/dropout_rates length must equal layer count".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            layers.push(DenseLayer::init(
                dims[i],
                dims[i + 1],
                activations[i],
                dropout_rates[i],
                rng,
            )?);
        }
        Ok(LayerStack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Forward pass. In train mode each unit is zeroed with probability
    /// `dropout_rate` and survivors are scaled by 1/(1-rate) (inverted
    /// dropout); infer mode applies the plain affine/activation chain.
    pub fn forward(&self, input: &[f64], mode: Mode, rng: &mut Rng) -> Result<(Vec<f64>, GradientTape)> {
        if input.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&x);
            for (zv, b) in z.iter_mut().zip(&layer.biases) {
                *zv += b;
            }
            let act: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let (out, mask) = if mode == Mode::Train && layer.dropout_rate > 0.0 {
                let keep_scale = 1.0 / (1.0 - layer.dropout_rate);
                let mask: Vec<bool> = act
                    .iter()
                    .map(|_| rng.next_f64() >= layer.dropout_rate)
                    .collect();
                let out = act
                    .iter()
                    .zip(&mask)
                    .map(|(&a, &keep)| if keep { a * keep_scale } else { 0.0 })
                    .collect();
                (out, Some(mask))
            } else {
                (act.clone(), None)
            };
            tapes.push(LayerTape {
                input: x,
                preact: z,
                act,
                mask,
            });
            x = out;
        }
        Ok((x, GradientTape { layers: tapes }))
    }

    /// Reverse pass over a recorded tape. Returns parameter gradients and
    /// the gradient with respect to the stack input. Dropout masks are
    /// replayed from the tape.
    pub fn backward(&self, tape: &GradientTape, output_grad: &[f64]) -> Result<(StackGrads, Vec<f64>)> {
        let mut grads = StackGrads::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        self.backward_into(tape, &mut upstream, &mut grads)?;
        Ok((grads, upstream))
    }

    /// Like [`backward`](Self::backward) but accumulates into existing
    /// gradient buffers; `upstream` is replaced by the input gradient.
    pub fn backward_into(
        &self,
        tape: &GradientTape,
        upstream: &mut Vec<f64>,
        grads: &mut StackGrads,
    ) -> Result<()> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::InvalidConfig("tape does not match stack".into()));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lt = &tape.layers[i];
            // undo dropout scaling
            if let Some(mask) = &lt.mask {
                let keep_scale = 1.0 / (1.0 - layer.dropout_rate);
                for (g, &keep) in upstream.iter_mut().zip(mask) {
                    *g = if keep { *g * keep_scale } else { 0.0 };
                }
            }
            // through activation
            let mut dz = upstream.clone();
            for ((g, &z), &a) in dz.iter_mut().zip(&lt.preact).zip(&lt.act) {
                *g *= layer.activation.derivative(z, a);
            }
            grads.weights[i].add_outer(&dz, &lt.input, 1.0);
            for (gb, &g) in grads.biases[i].iter_mut().zip(&dz) {
                *gb += g;
            }
            *upstream = layer.weights.matvec_t(&dz);
        }
        Ok(())
    }
}

/// One plain SGD update: `p -= learning_rate * g` for every parameter.
pub fn sgd_step(stack: &mut LayerStack, grads: &StackGrads, learning_rate: f64) -> Result<()> {
    if grads.weights.len() != stack.layers.len() {
        return Err(Error::InvalidConfig("gradient/stack layer count mismatch".into()));
    }
    for (layer, (gw, gb)) in stack
        .layers
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        if gw.rows != layer.out_dim() || gw.cols != layer.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: layer.out_dim() * layer.in_dim(),
                got: gw.rows * gw.cols,
            });
        }
        sgd_step_slice(&mut layer.weights.data, &gw.data, learning_rate);
        sgd_step_slice(&mut layer.biases, gb, learning_rate);
    }
    Ok(())
}

/// Element-wise SGD update on a flat parameter slice.
pub fn sgd_step_slice(params: &mut [f64], grads: &[f64], learning_rate: f64) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
}
