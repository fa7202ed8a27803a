//! Bags of instances, delimited-text ingestion, feature standardization,
//! duplication padding and a synthetic bag generator.
//!
//! The on-disk format is one instance per row:
//! `bag_id,label,f0,...,f{D-1}` with a header line. Synthetic datasets
//! get a `.meta` sidecar listing the planted witness index per positive
//! bag.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One feature vector inside a bag (a single nodule's radiomics values).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
}

impl Instance {
    pub fn new(features: Vec<f64>) -> Self {
        Instance { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Bag label; positive means the subject has the condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_u8() as f64
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// One subject: an id, a bag-level label and one or more instances.
///
/// `padding[i]` is true when slot `i` was introduced by
/// [`pad_bag_duplicate`]; freshly loaded or generated bags have all-false
/// flags. `witness` is generator metadata (index of the planted positive
/// instance) and is never visible to models.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub label: Label,
    pub instances: Vec<Instance>,
    pub padding: Vec<bool>,
    pub witness: Option<usize>,
}

impl Bag {
    pub fn new(bag_id: impl Into<String>, label: Label, instances: Vec<Instance>) -> Self {
        let n = instances.len();
        Bag {
            bag_id: bag_id.into(),
            label,
            instances,
            padding: vec![false; n],
            witness: None,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// The bag with all padding slots removed.
    pub fn without_padding(&self) -> Bag {
        let mut out = self.clone();
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !self.padding[i]).collect();
        out.instances = keep.iter().map(|&i| self.instances[i].clone()).collect();
        out.padding = vec![false; out.instances.len()];
        out
    }
}

/// A collection of bags with consistent feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MilDataset {
    pub bags: Vec<Bag>,
    pub feature_dim: usize,
    pub feature_names: Option<Vec<String>>,
}

impl MilDataset {
    pub fn new(bags: Vec<Bag>, feature_dim: usize) -> Result<Self> {
        let ds = MilDataset {
            bags,
            feature_dim,
            feature_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.bags.iter().all(|b| b.is_empty()) {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashMap::new();
        for bag in &self.bags {
            if bag.is_empty() {
                return Err(Error::EmptyBag {
                    bag_id: bag.bag_id.clone(),
                });
            }
            if seen.insert(bag.bag_id.clone(), ()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate bag_id {}",
                    bag.bag_id
                )));
            }
            for inst in &bag.instances {
                if inst.dim() != self.feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.feature_dim,
                        got: inst.dim(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn count_positive(&self) -> usize {
        self.bags.iter().filter(|b| b.label.is_positive()).count()
    }

    pub fn count_negative(&self) -> usize {
        self.bags.len() - self.count_positive()
    }
}

/// Per-feature z-score parameters, fitted on training bags only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

const VARIANCE_FLOOR: f64 = 1e-8;

/// Pools all instances of the training bags and computes per-feature mean
/// and sample standard deviation. Features with std below 1e-8 get std
/// 1.0 so constant features pass through unscaled.
pub fn fit_standardizer(train_bags: &[Bag]) -> Result<Standardizer> {
    let instances: Vec<&Instance> = train_bags.iter().flat_map(|b| b.instances.iter()).collect();
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = instances[0].dim();
    let n = instances.len() as f64;
    let mut means = vec![0.0; dim];
    for inst in &instances {
        for (m, &x) in means.iter_mut().zip(&inst.features) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; dim];
    if instances.len() > 1 {
        for inst in &instances {
            for ((s, &m), &x) in stds.iter_mut().zip(&means).zip(&inst.features) {
                *s += (x - m) * (x - m);
            }
        }
        for s in &mut stds {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    for s in &mut stds {
        if *s < VARIANCE_FLOOR {
            *s = 1.0;
        }
    }
    Ok(Standardizer { means, stds })
}

/// Applies `(x - mean) / std` per feature; ids, labels and flags are
/// untouched.
pub fn apply_standardizer(s: &Standardizer, bag: &Bag) -> Result<Bag> {
    let mut out = bag.clone();
    for inst in &mut out.instances {
        if inst.dim() != s.means.len() {
            return Err(Error::DimensionMismatch {
                expected: s.means.len(),
                got: inst.dim(),
            });
        }
        for (i, x) in inst.features.iter_mut().enumerate() {
            *x = (*x - s.means[i]) / s.stds[i];
        }
    }
    Ok(out)
}

/// Cycles the bag's instances in order until it has `target_size` slots,
/// flagging the appended slots as padding. Slot `i` holds instance
/// `i % original_len`.
pub fn pad_bag_duplicate(bag: &Bag, target_size: usize) -> Result<Bag> {
    let n = bag.len();
    if target_size < n {
        return Err(Error::InvalidConfig(format!(
            "pad target {target_size} smaller than bag size {n}"
        )));
    }
    let mut out = bag.clone();
    for i in n..target_size {
        out.instances.push(bag.instances[i % n].clone());
        out.padding.push(true);
    }
    Ok(out)
}

/// Parameters for the synthetic bag generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub feature_dim: usize,
    pub bag_size_range: (usize, usize),
    pub witness_shift: f64,
    pub n_signal_dims: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pos: 82,
            n_neg: 28,
            feature_dim: 103,
            bag_size_range: (1, 12),
            witness_shift: 2.0,
            n_signal_dims: 10,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_pos + self.n_neg < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 bags in total".into(),
            ));
        }
        let (lo, hi) = self.bag_size_range;
        if lo < 1 || hi < lo {
            return Err(Error::InvalidConfig(format!(
                "bad bag size range [{lo}, {hi}]"
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.n_signal_dims > self.feature_dim {
            return Err(Error::InvalidConfig(
                "n_signal_dims exceeds feature_dim".into(),
            ));
        }
        Ok(())
    }
}

/// Generates `n_neg` negative bags of standard-normal instances and
/// `n_pos` positive bags that each carry exactly one witness instance
/// whose first `n_signal_dims` coordinates are shifted by
/// `witness_shift`. Deterministic in the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MilDataset> {
    spec.validate()?;
    let mut rng = Rng::from_seed(spec.seed);
    let (lo, hi) = spec.bag_size_range;
    let mut bags = Vec::with_capacity(spec.n_pos + spec.n_neg);
    for i in 0..spec.n_pos {
        let size = rng.next_range(lo, hi);
        let witness = rng.next_range(0, size - 1);
        let mut instances = Vec::with_capacity(size);
        for k in 0..size {
            let mut features: Vec<f64> =
                (0..spec.feature_dim).map(|_| rng.next_gaussian()).collect();
            if k == witness {
                for f in features.iter_mut().take(spec.n_signal_dims) {
                    *f += spec.witness_shift;
                }
            }
            instances.push(Instance::new(features));
        }
        let mut bag = Bag::new(format!("pos{i:03}"), Label::Positive, instances);
        bag.witness = Some(witness);
        bags.push(bag);
    }
    for i in 0..spec.n_neg {
        let size = rng.next_range(lo, hi);
        let instances = (0..size)
            .map(|_| {
                Instance::new((0..spec.feature_dim).map(|_| rng.next_gaussian()).collect())
            })
            .collect();
        bags.push(Bag::new(format!("neg{i:03}"), Label::Negative, instances));
    }
    MilDataset::new(bags, spec.feature_dim)
}

/// Loads a dataset from the instance-row format. When `feature_dim` is
/// absent it is inferred from the header.
pub fn load_dataset(path: &Path, feature_dim: Option<usize>) -> Result<MilDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let header_cols: Vec<&str> = header.split(',').collect();
    if header_cols.len() < 3 || header_cols[0] != "bag_id" || header_cols[1] != "label" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header `bag_id,label,f0,...`".into(),
        });
    }
    let dim = match feature_dim {
        Some(d) => d,
        None => header_cols.len() - 2,
    };
    let feature_names: Vec<String> = header_cols[2..].iter().map(|s| s.to_string()).collect();

    // Preserve first-appearance order of bag ids.
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, (Label, Vec<Instance>)> = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != dim + 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} columns, got {}", dim + 2, cols.len()),
            });
        }
        let bag_id = cols[0].to_string();
        let label_int: i64 = cols[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad label {:?}", cols[1]),
        })?;
        let label = Label::from_int(label_int).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("label must be 0 or 1, got {label_int}"),
        })?;
        let mut features = Vec::with_capacity(dim);
        for (j, cell) in cols[2..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("non-numeric feature f{j}: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("non-finite feature f{j}"),
                });
            }
            features.push(v);
        }
        match by_id.get_mut(&bag_id) {
            Some((existing, instances)) => {
                if *existing != label {
                    return Err(Error::ConflictingLabels { bag_id });
                }
                instances.push(Instance::new(features));
            }
            None => {
                order.push(bag_id.clone());
                by_id.insert(bag_id, (label, vec![Instance::new(features)]));
            }
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bags = order
        .into_iter()
        .map(|id| {
            let (label, instances) = by_id.remove(&id).unwrap();
            Bag::new(id, label, instances)
        })
        .collect();
    let mut ds = MilDataset::new(bags, dim)?;
    ds.feature_names = Some(feature_names);
    Ok(ds)
}

/// Serializes a dataset back to the instance-row format. Floats are
/// written in shortest round-trip form, so save/load is lossless.
pub fn format_dataset(ds: &MilDataset) -> String {
    let mut out = String::new();
    out.push_str("bag_id,label");
    match &ds.feature_names {
        Some(names) => {
            for name in names {
                out.push(',');
                out.push_str(name);
            }
        }
        None => {
            for j in 0..ds.feature_dim {
                let _ = write!(out, ",f{j}");
            }
        }
    }
    out.push('\n');
    for bag in &ds.bags {
        for inst in &bag.instances {
            let _ = write!(out, "{},{}", bag.bag_id, bag.label.as_u8());
            for &x in &inst.features {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
    }
    out
}

/// Witness sidecar content: one `bag_id,witness_index` line per positive
/// bag that recorded a witness.
pub fn format_witness_meta(ds: &MilDataset) -> String {
    let mut out = String::from("bag_id,witness_index\n");
    for bag in &ds.bags {
        if let Some(w) = bag.witness {
            let _ = writeln!(out, "{},{w}", bag.bag_id);
        }
    }
    out
}
