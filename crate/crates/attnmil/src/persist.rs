//! Model persistence: a self-describing versioned text format. The
//! header names the format version, model kind, feature dimension and
//! layer layout; each parameter tensor follows as one line with shape
//! and values at 17 significant digits, so save -> load round-trips
//! bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{apply_standardizer, pad_bag_duplicate, Bag, Standardizer};
use crate::error::{Error, Result};
use crate::models::{
    misvm_score, predict_bag, predict_minet, AttentionMilModel, AttentionParams, AttentionReport,
    MiNetModel, MiSvmModel, Pooling, TrainConfig,
};
use crate::nncore::{Activation, DenseLayer, LayerStack, Mat};
use crate::rng::Rng;

const FORMAT_VERSION: u32 = 1;

/// A trained model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    AttentionMil(AttentionMilModel),
    MiNet(MiNetModel),
    MiSvm(MiSvmModel),
}

impl ModelKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelKind::AttentionMil(_) => "attention_mil",
            ModelKind::MiNet(_) => "mi_net",
            ModelKind::MiSvm(_) => "mi_svm",
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ModelKind::AttentionMil(m) => m.feature_dim(),
            ModelKind::MiNet(m) => m.feature_dim(),
            ModelKind::MiSvm(m) => m.feature_dim(),
        }
    }
}

/// A model bundled with the preprocessing it was trained with, so
/// prediction on raw data applies the same standardization and padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedBundle {
    pub model: ModelKind,
    pub standardizer: Option<Standardizer>,
    pub pad_to: Option<usize>,
}

impl TrainedBundle {
    fn prepare(&self, bag: &Bag) -> Result<Bag> {
        let mut bag = match &self.standardizer {
            Some(s) => apply_standardizer(s, bag)?,
            None => bag.clone(),
        };
        if let Some(target) = self.pad_to {
            bag = pad_bag_duplicate(&bag, target.max(bag.len()))?;
        }
        Ok(bag)
    }

    /// Score one raw bag: probability (or margin for MI-SVM),
    /// thresholded label and, for the attention model, the report.
    pub fn predict(&self, bag: &Bag) -> Result<(f64, u8, Option<AttentionReport>)> {
        let prepared = self.prepare(bag)?;
        match &self.model {
            ModelKind::AttentionMil(m) => {
                let (p, label, report) = predict_bag(m, &prepared)?;
                Ok((p, label, Some(report)))
            }
            ModelKind::MiNet(m) => {
                let (p, label) = predict_minet(m, &prepared)?;
                Ok((p, label, None))
            }
            ModelKind::MiSvm(m) => {
                let (score, label) = misvm_score(m, &prepared)?;
                Ok((score, label, None))
            }
        }
    }
}

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = write!(out, "tensor {name} {rows} {cols}");
    for v in data {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

/// Serializes a bundle to the versioned text format.
pub fn format_model(bundle: &TrainedBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "attnmil-model v{FORMAT_VERSION} kind={} feature_dim={}",
        bundle.model.kind_name(),
        bundle.model.feature_dim()
    );
    if let Some(target) = bundle.pad_to {
        let _ = writeln!(out, "pad_to {target}");
    }
    match &bundle.model {
        ModelKind::AttentionMil(m) => {
            write_stack_header(&mut out, &m.transform);
            let _ = writeln!(out, "attention {} {}", m.attention.v.rows, m.attention.v.cols);
            write_stack_tensors(&mut out, &m.transform, "transform");
            write_tensor(
                &mut out,
                "attention.v",
                m.attention.v.rows,
                m.attention.v.cols,
                &m.attention.v.data,
            );
            write_tensor(&mut out, "attention.w", 1, m.attention.w.len(), &m.attention.w);
            write_tensor(&mut out, "head.weight", 1, m.head.in_dim(), &m.head.weights.data);
            write_tensor(&mut out, "head.bias", 1, 1, &m.head.biases);
        }
        ModelKind::MiNet(m) => {
            write_stack_header(&mut out, &m.transform);
            let _ = writeln!(out, "pooling {}", m.pooling.name());
            write_stack_tensors(&mut out, &m.transform, "transform");
            write_tensor(&mut out, "head.weight", 1, m.head.in_dim(), &m.head.weights.data);
            write_tensor(&mut out, "head.bias", 1, 1, &m.head.biases);
        }
        ModelKind::MiSvm(m) => {
            let _ = writeln!(out, "lambda {:.16e}", m.lambda);
            write_tensor(&mut out, "svm.weight", 1, m.weights.len(), &m.weights);
            write_tensor(&mut out, "svm.bias", 1, 1, &[m.bias]);
        }
    }
    if let Some(s) = &bundle.standardizer {
        write_tensor(&mut out, "standardizer.mean", 1, s.means.len(), &s.means);
        write_tensor(&mut out, "standardizer.std", 1, s.stds.len(), &s.stds);
    }
    out
}

fn write_stack_header(out: &mut String, stack: &LayerStack) {
    let _ = write!(out, "layers {}", stack.layers.len());
    for layer in &stack.layers {
        let _ = write!(
            out,
            " {}x{}:{}:{}",
            layer.out_dim(),
            layer.in_dim(),
            layer.activation.name(),
            layer.dropout_rate
        );
    }
    out.push('\n');
}

fn write_stack_tensors(out: &mut String, stack: &LayerStack, prefix: &str) {
    for (i, layer) in stack.layers.iter().enumerate() {
        write_tensor(
            out,
            &format!("{prefix}.{i}.weight"),
            layer.out_dim(),
            layer.in_dim(),
            &layer.weights.data,
        );
        write_tensor(out, &format!("{prefix}.{i}.bias"), 1, layer.out_dim(), &layer.biases);
    }
}

pub fn save_model(bundle: &TrainedBundle, path: &Path) -> Result<()> {
    crate::config::write_atomic(path, &format_model(bundle))
}

struct Parser<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.lines.next().ok_or_else(|| self.err("unexpected end of file"))
    }

    fn expect_tensor(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>)> {
        let line = self.next_line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some("tensor") {
            return Err(self.err(format!("expected tensor line, got {line:?}")));
        }
        let got = parts.next().unwrap_or("");
        if got != name {
            return Err(self.err(format!("expected tensor {name}, got {got}")));
        }
        let rows: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err("bad tensor rows"))?;
        let cols: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err("bad tensor cols"))?;
        let data: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("bad tensor value: {e}")))?;
        if data.len() != rows * cols {
            return Err(self.err(format!(
                "tensor {name}: expected {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok((rows, cols, data))
    }
}

fn parse_layer_descs(parser: &Parser, line: &str) -> Result<Vec<(usize, usize, Activation, f64)>> {
    let mut parts = line.split(' ');
    if parts.next() != Some("layers") {
        return Err(parser.err(format!("expected layers line, got {line:?}")));
    }
    let n: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parser.err("bad layer count"))?;
    let mut descs = Vec::with_capacity(n);
    for desc in parts {
        let mut fields = desc.split(':');
        let shape = fields.next().unwrap_or("");
        let (out_dim, in_dim) = shape
            .split_once('x')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| parser.err(format!("bad layer shape {shape:?}")))?;
        let activation = fields
            .next()
            .and_then(Activation::from_name)
            .ok_or_else(|| parser.err("bad activation"))?;
        let dropout: f64 = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parser.err("bad dropout"))?;
        descs.push((out_dim, in_dim, activation, dropout));
    }
    if descs.len() != n {
        return Err(parser.err("layer count mismatch"));
    }
    Ok(descs)
}

fn read_stack(
    parser: &mut Parser,
    descs: &[(usize, usize, Activation, f64)],
    prefix: &str,
) -> Result<LayerStack> {
    let mut layers = Vec::with_capacity(descs.len());
    for (i, &(out_dim, in_dim, activation, dropout)) in descs.iter().enumerate() {
        let (rows, cols, data) = parser.expect_tensor(&format!("{prefix}.{i}.weight"))?;
        if rows != out_dim || cols != in_dim {
            return Err(parser.err(format!("layer {i} weight shape mismatch")));
        }
        let (_, _, biases) = parser.expect_tensor(&format!("{prefix}.{i}.bias"))?;
        if biases.len() != out_dim {
            return Err(parser.err(format!("layer {i} bias shape mismatch")));
        }
        layers.push(DenseLayer {
            weights: Mat { rows, cols, data },
            biases,
            activation,
            dropout_rate: dropout,
        });
    }
    Ok(LayerStack { layers })
}

/// Parses the versioned text format back into a bundle.
pub fn parse_model(text: &str, path: &Path) -> Result<TrainedBundle> {
    let mut parser = Parser {
        path,
        lines: text.lines().peekable(),
    };
    let header = parser.next_line()?;
    let mut fields = header.split(' ');
    if fields.next() != Some("attnmil-model") {
        return Err(parser.err("missing attnmil-model header"));
    }
    match fields.next() {
        Some(v) if v == format!("v{FORMAT_VERSION}") => {}
        other => return Err(parser.err(format!("unsupported format version {other:?}"))),
    }
    let mut kind = None;
    let mut feature_dim = None;
    for field in fields {
        match field.split_once('=') {
            Some(("kind", v)) => kind = Some(v.to_string()),
            Some(("feature_dim", v)) => feature_dim = v.parse().ok(),
            _ => return Err(parser.err(format!("bad header field {field:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| parser.err("header missing kind"))?;
    let feature_dim: usize = feature_dim.ok_or_else(|| parser.err("header missing feature_dim"))?;

    let mut pad_to = None;
    if let Some(line) = parser.lines.peek() {
        if let Some(rest) = line.strip_prefix("pad_to ") {
            pad_to = Some(
                rest.parse()
                    .map_err(|_| parser.err("bad pad_to value"))?,
            );
            parser.lines.next();
        }
    }

    let model = match kind.as_str() {
        "attention_mil" => {
            let descs = {
                let line = parser.next_line()?;
                parse_layer_descs(&parser, line)?
            };
            let attn_line = parser.next_line()?;
            let (l, m) = attn_line
                .strip_prefix("attention ")
                .and_then(|rest| rest.split_once(' '))
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                .ok_or_else(|| parser.err("bad attention line"))?;
            let transform = read_stack(&mut parser, &descs, "transform")?;
            let (_, _, v_data) = parser.expect_tensor("attention.v")?;
            let (_, _, w) = parser.expect_tensor("attention.w")?;
            let (_, head_in, head_w) = parser.expect_tensor("head.weight")?;
            let (_, _, head_b) = parser.expect_tensor("head.bias")?;
            ModelKind::AttentionMil(AttentionMilModel {
                transform,
                attention: AttentionParams {
                    v: Mat {
                        rows: l,
                        cols: m,
                        data: v_data,
                    },
                    w,
                },
                head: DenseLayer {
                    weights: Mat {
                        rows: 1,
                        cols: head_in,
                        data: head_w,
                    },
                    biases: head_b,
                    activation: Activation::Sigmoid,
                    dropout_rate: 0.0,
                },
            })
        }
        "mi_net" => {
            let descs = {
                let line = parser.next_line()?;
                parse_layer_descs(&parser, line)?
            };
            let pooling_line = parser.next_line()?;
            let pooling = pooling_line
                .strip_prefix("pooling ")
                .and_then(Pooling::from_name)
                .ok_or_else(|| parser.err("bad pooling line"))?;
            let transform = read_stack(&mut parser, &descs, "transform")?;
            let (_, head_in, head_w) = parser.expect_tensor("head.weight")?;
            let (_, _, head_b) = parser.expect_tensor("head.bias")?;
            ModelKind::MiNet(MiNetModel {
                transform,
                head: DenseLayer {
                    weights: Mat {
                        rows: 1,
                        cols: head_in,
                        data: head_w,
                    },
                    biases: head_b,
                    activation: Activation::Sigmoid,
                    dropout_rate: 0.0,
                },
                pooling,
            })
        }
        "mi_svm" => {
            let lambda_line = parser.next_line()?;
            let lambda: f64 = lambda_line
                .strip_prefix("lambda ")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parser.err("bad lambda line"))?;
            let (_, _, weights) = parser.expect_tensor("svm.weight")?;
            let (_, _, bias) = parser.expect_tensor("svm.bias")?;
            ModelKind::MiSvm(MiSvmModel {
                weights,
                bias: bias[0],
                lambda,
            })
        }
        other => return Err(parser.err(format!("unknown model kind {other:?}"))),
    };
    if model.feature_dim() != feature_dim {
        return Err(parser.err(format!(
            "header feature_dim {feature_dim} does not match tensors ({})",
            model.feature_dim()
        )));
    }

    let mut standardizer = None;
    if parser.lines.peek().is_some() {
        let (_, _, means) = parser.expect_tensor("standardizer.mean")?;
        let (_, _, stds) = parser.expect_tensor("standardizer.std")?;
        standardizer = Some(Standardizer { means, stds });
    }
    Ok(TrainedBundle {
        model,
        standardizer,
        pad_to,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedBundle> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text, path)
}

/// Convenience constructor for tests and the CLI: a freshly initialized
/// (untrained) attention model bundle.
pub fn init_attention_bundle(feature_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<TrainedBundle> {
    let mut rng = Rng::from_seed(seed);
    Ok(TrainedBundle {
        model: ModelKind::AttentionMil(AttentionMilModel::init(feature_dim, cfg, &mut rng)?),
        standardizer: None,
        pad_to: None,
    })
}
