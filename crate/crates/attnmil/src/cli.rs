//! Command implementations behind the `attnmil` binary: `gen`, `train`,
//! `predict`, `crossval`, `compare`. Each command is deterministic given
//! its flags and seed, writes its outputs atomically, and leaves a
//! resolved-config echo in the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{write_atomic, Settings};
use crate::dataset::{
    apply_standardizer, fit_standardizer, format_dataset, format_witness_meta, generate_synthetic,
    load_dataset, pad_bag_duplicate, Bag, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    comparison_csv, compare_reports, oversample_negative_bags, run_crossval, EvalReport,
    MetricRecord,
};
use crate::models::{
    train_attention_mil, train_minet, train_misvm, AttentionReport, Method, TrainConfig,
};
use crate::persist::{load_model, save_model, ModelKind, TrainedBundle};
use crate::rng::Rng;

#[derive(Parser, Debug)]
#[command(
    name = "attnmil",
    about = "Attention-based multiple instance learning experiments on bag-structured feature data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset (instance-row CSV plus witness sidecar)
    Gen(GenArgs),
    /// Train one model on a dataset file and save it with its attention report
    Train(TrainArgs),
    /// Score a dataset file with a saved model
    Predict(PredictArgs),
    /// Repeated stratified cross-validation with full metric reports
    Crossval(CrossvalArgs),
    /// Paired Wilcoxon comparison of two crossval report directories
    Compare(CompareArgs),
}

/// Flags shared by train and crossval; every `Option` overrides the
/// config file which overrides the defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Flat key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Cross-validation folds (k)
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Synthetic negative training bags per fold (S)
    #[arg(long)]
    pub oversample: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Duplication-pad every bag to 12 slots (paper-compatibility mode)
    #[arg(long)]
    pub pad_duplicate: bool,
    /// Disable per-fold feature standardization
    #[arg(long)]
    pub no_standardize: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method {s:?} (attention_mil|mi_net|mi_svm)"))
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<Settings> {
        let mut settings = Settings::default();
        if let Some(path) = &self.config {
            settings.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            settings.seed = seed;
        }
        if let Some(method) = self.method {
            settings.method = method;
        }
        if let Some(folds) = self.folds {
            settings.folds = folds;
        }
        if let Some(reps) = self.repetitions {
            settings.repetitions = reps;
        }
        if let Some(s) = self.oversample {
            settings.oversample = s;
        }
        if let Some(epochs) = self.epochs {
            settings.epochs = epochs;
        }
        if let Some(lr) = self.lr {
            settings.learning_rate = lr;
        }
        if self.pad_duplicate {
            settings.pad_duplicate = true;
        }
        if self.no_standardize {
            settings.standardize = false;
        }
        Ok(settings)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Positive bag count
    #[arg(long)]
    pub pos: usize,
    /// Negative bag count
    #[arg(long)]
    pub neg: usize,
    /// Feature dimension D
    #[arg(long, default_value_t = 103)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub bag_min: usize,
    #[arg(long, default_value_t = 12)]
    pub bag_max: usize,
    /// Witness mean shift on the signal dimensions
    #[arg(long, default_value_t = 2.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 10)]
    pub signal_dims: usize,
    /// Output dataset file (the witness sidecar gets a .meta suffix)
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_pos: args.pos,
        n_neg: args.neg,
        feature_dim: args.dim,
        bag_size_range: (args.bag_min, args.bag_max),
        witness_shift: args.shift,
        n_signal_dims: args.signal_dims,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec)?;
    write_atomic(&args.out, &format_dataset(&ds))?;
    let meta_path = sidecar_path(&args.out);
    write_atomic(&meta_path, &format_witness_meta(&ds))?;
    println!(
        "wrote {} bags ({} positive, {} negative, dim {}) to {}",
        ds.bags.len(),
        ds.count_positive(),
        ds.count_negative(),
        ds.feature_dim,
        args.out.display()
    );
    Ok(())
}

fn sidecar_path(dataset_path: &Path) -> PathBuf {
    let mut os = dataset_path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training dataset (instance-row CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn prepare_bags(
    bags: &[Bag],
    cfg: &TrainConfig,
    standardizer: Option<&crate::dataset::Standardizer>,
) -> Result<Vec<Bag>> {
    let mut out = Vec::with_capacity(bags.len());
    for bag in bags {
        let mut bag = match standardizer {
            Some(s) => apply_standardizer(s, bag)?,
            None => bag.clone(),
        };
        if cfg.pad_duplicate {
            bag = pad_bag_duplicate(&bag, cfg.pad_target.max(bag.len()))?;
        }
        out.push(bag);
    }
    Ok(out)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let cfg = settings.to_train_config();
    cfg.validate()?;
    let ds = load_dataset(&args.data, None)?;

    let standardizer = if cfg.standardize {
        Some(fit_standardizer(&ds.bags)?)
    } else {
        None
    };
    let mut train_bags = prepare_bags(&ds.bags, &cfg, standardizer.as_ref())?;
    if cfg.oversample_count > 0 {
        let mut rng = Rng::from_seed(crate::rng::derive_seed(settings.seed, &[7]));
        train_bags = oversample_negative_bags(
            &train_bags,
            cfg.oversample_count,
            settings.size_policy,
            &mut rng,
        )?;
    }

    let model = match settings.method {
        Method::AttentionMil => ModelKind::AttentionMil(train_attention_mil(&train_bags, &cfg)?.0),
        Method::MiNet => ModelKind::MiNet(train_minet(&train_bags, &cfg)?.0),
        Method::MiSvm => {
            let mut rng = Rng::from_seed(cfg.seed);
            ModelKind::MiSvm(train_misvm(
                &train_bags,
                cfg.svm_lambda,
                cfg.svm_inner_epochs,
                cfg.svm_max_outer_iters,
                &mut rng,
            )?)
        }
    };
    let bundle = TrainedBundle {
        model,
        standardizer,
        pad_to: cfg.pad_duplicate.then_some(cfg.pad_target),
    };
    save_model(&bundle, &args.out.join("model.txt"))?;
    write_atomic(&args.out.join("config.resolved"), &settings.render_resolved())?;

    // attention report over every input bag (attention model only)
    if settings.method == Method::AttentionMil {
        let mut reports = Vec::with_capacity(ds.bags.len());
        for bag in &ds.bags {
            let (_, _, report) = bundle.predict(bag)?;
            reports.push(report.expect("attention model yields a report"));
        }
        write_atomic(&args.out.join("attention.csv"), &attention_csv(&reports))?;
    }
    println!(
        "trained {} on {} bags; model saved to {}",
        settings.method.name(),
        ds.bags.len(),
        args.out.join("model.txt").display()
    );
    Ok(())
}

fn attention_csv(reports: &[AttentionReport]) -> String {
    let mut out = String::from("bag_id,instance_index,alpha,is_padding\n");
    for report in reports {
        for (i, (&alpha, &pad)) in report.weights.iter().zip(&report.padding).enumerate() {
            let _ = writeln!(out, "{},{},{:.17e},{}", report.bag_id, i, alpha, pad as u8);
        }
    }
    out
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Saved model file
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset to score
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let bundle = load_model(&args.model)?;
    let ds = load_dataset(&args.data, None)?;
    if ds.feature_dim != bundle.model.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: bundle.model.feature_dim(),
            got: ds.feature_dim,
        });
    }
    let mut out = String::from("bag_id,score,label\n");
    let mut reports = Vec::new();
    for bag in &ds.bags {
        let (score, label, report) = bundle.predict(bag)?;
        let _ = writeln!(out, "{},{:.17e},{}", bag.bag_id, score, label);
        if let Some(r) = report {
            reports.push(r);
        }
    }
    write_atomic(&args.out.join("predictions.csv"), &out)?;
    if !reports.is_empty() {
        write_atomic(&args.out.join("attention.csv"), &attention_csv(&reports))?;
    }
    println!(
        "scored {} bags with {}; wrote {}",
        ds.bags.len(),
        bundle.model.kind_name(),
        args.out.join("predictions.csv").display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    /// Dataset (instance-row CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn cmd_crossval(args: &CrossvalArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let ds = load_dataset(&args.data, None)?;
    let report = run_crossval(
        &ds,
        settings.method,
        &settings.to_train_config(),
        &settings.to_crossval_options(),
    )?;
    write_report_dir(&args.out, &settings, &report)?;
    println!(
        "crossval {} x {} folds with {}: wrote reports to {}",
        settings.repetitions,
        settings.folds,
        settings.method.name(),
        args.out.display()
    );
    for s in report.summary(false) {
        match (s.mean, s.sem) {
            (Some(mean), Some(sem)) => println!("  {}: {:.3} (SEM {:.3})", s.metric, mean, sem),
            (Some(mean), None) => println!("  {}: {:.3}", s.metric, mean),
            _ => println!("  {}: undefined", s.metric),
        }
    }
    Ok(())
}

pub fn write_report_dir(dir: &Path, settings: &Settings, report: &EvalReport) -> Result<()> {
    write_atomic(&dir.join("config.resolved"), &settings.render_resolved())?;
    write_atomic(&dir.join("records.csv"), &report.records_csv())?;
    write_atomic(&dir.join("summary.csv"), &report.summary_csv())?;
    write_atomic(&dir.join("roc.csv"), &report.roc_csv())?;
    write_atomic(
        &dir.join("calibration.csv"),
        &report.calibration_csv(settings.calibration_bins),
    )?;
    write_atomic(&dir.join("predictions.csv"), &report.predictions_csv())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// First crossval output directory
    #[arg(long)]
    pub a: PathBuf,
    /// Second crossval output directory
    #[arg(long)]
    pub b: PathBuf,
    /// Output directory for comparison.csv
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let report_a = load_report_dir(&args.a)?;
    let report_b = load_report_dir(&args.b)?;
    let comparisons = compare_reports(&report_a, &report_b)?;
    let csv = comparison_csv(report_a.method.name(), report_b.method.name(), &comparisons);
    write_atomic(&args.out.join("comparison.csv"), &csv)?;
    println!(
        "compared {} vs {} over {} repetitions; wrote {}",
        report_a.method.name(),
        report_b.method.name(),
        report_a.repetitions,
        args.out.join("comparison.csv").display()
    );
    for c in &comparisons {
        if let Some(p) = c.p_value {
            println!("  {}: direction {} p={:.5}", c.metric, c.direction, p);
        }
    }
    Ok(())
}

/// Reads a crossval output directory back into an [`EvalReport`]
/// (records and pairing metadata; per-bag predictions are not needed for
/// comparison).
pub fn load_report_dir(dir: &Path) -> Result<EvalReport> {
    let summary_path = dir.join("summary.csv");
    let text = std::fs::read_to_string(&summary_path).map_err(|source| Error::Io {
        path: summary_path.clone(),
        source,
    })?;
    let mut method = None;
    let mut master_seed = None;
    let mut repetitions = None;
    let mut k = None;
    let mut plan_hash = None;
    for line in text.lines() {
        let mut cols = line.split(',');
        let key = cols.next().unwrap_or("");
        let value = cols.next().unwrap_or("");
        match key {
            "method" => method = Method::from_name(value),
            "master_seed" => master_seed = value.parse().ok(),
            "repetitions" => repetitions = value.parse().ok(),
            "folds" => k = value.parse().ok(),
            "plan_hash" => plan_hash = u64::from_str_radix(value, 16).ok(),
            _ => {}
        }
    }
    let missing = |field: &str| Error::UnpairedReports(format!("{}: missing {field}", dir.display()));
    let method = method.ok_or_else(|| missing("method"))?;
    let master_seed = master_seed.ok_or_else(|| missing("master_seed"))?;
    let repetitions = repetitions.ok_or_else(|| missing("repetitions"))?;
    let k = k.ok_or_else(|| missing("folds"))?;
    let plan_hash = plan_hash.ok_or_else(|| missing("plan_hash"))?;

    let records_path = dir.join("records.csv");
    let text = std::fs::read_to_string(&records_path).map_err(|source| Error::Io {
        path: records_path.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(Error::Parse {
                path: records_path.clone(),
                line: i + 1,
                message: format!("expected 12 columns, got {}", cols.len()),
            });
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                path: records_path.clone(),
                line: i + 1,
                message: format!("bad integer {s:?}"),
            })
        };
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Parse {
                    path: records_path.clone(),
                    line: i + 1,
                    message: format!("bad number {s:?}"),
                })
            }
        };
        records.push(MetricRecord {
            repetition: parse_usize(cols[0])?,
            fold: parse_usize(cols[1])?,
            tp: parse_usize(cols[3])?,
            fp: parse_usize(cols[4])?,
            tn: parse_usize(cols[5])?,
            fn_: parse_usize(cols[6])?,
            recall: parse_opt(cols[7])?,
            accuracy: parse_opt(cols[8])?,
            ppv: parse_opt(cols[9])?,
            npv: parse_opt(cols[10])?,
            auc: parse_opt(cols[11])?,
        });
    }
    Ok(EvalReport {
        method,
        master_seed,
        repetitions,
        k,
        plan_hash,
        records,
        predictions: Vec::new(),
    })
}
