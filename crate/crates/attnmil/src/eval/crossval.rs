//! End-to-end experiment driver: repeated stratified cross-validation
//! with per-fold standardization, optional negative-bag oversampling and
//! one model trained per (repetition, fold) cell. Every cell derives its
//! own random stream from the master seed, so the report is identical
//! regardless of how many worker threads execute the cells.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dataset::{apply_standardizer, fit_standardizer, pad_bag_duplicate, Bag, MilDataset};
use crate::error::{Error, Result};
use crate::models::{
    misvm_score, predict_bag, predict_minet, train_attention_mil, train_minet, train_misvm,
    Method, TrainConfig,
};
use crate::rng::{derive_seed, Rng};

use super::folds::{stratified_kfold, FoldPlan};
use super::metrics::{aggregate_mean_sem, calibration_curve, confusion_metrics, roc_auc, MetricRecord};
use super::oversample::{oversample_negative_bags, SizePolicy};
use super::wilcoxon::wilcoxon_signed_rank;

pub const METRIC_NAMES: [&str; 5] = ["recall", "accuracy", "ppv", "npv", "auc"];

/// Cross-validation shape: repetitions x k folds, all randomness derived
/// from `master_seed`.
#[derive(Debug, Clone)]
pub struct CrossvalOptions {
    pub repetitions: usize,
    pub k: usize,
    pub master_seed: u64,
    pub size_policy: SizePolicy,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions {
            repetitions: 20,
            k: 5,
            master_seed: 0,
            size_policy: SizePolicy::Empirical,
        }
    }
}

/// One scored test bag.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub repetition: usize,
    pub fold: usize,
    pub bag_id: String,
    /// Probability for the neural models, raw margin for MI-SVM.
    pub score: f64,
    pub true_label: u8,
    pub predicted_label: u8,
    /// Attention weights per instance slot (attention_mil only).
    pub attention: Option<Vec<f64>>,
}

/// Full cross-validation output: per-fold metric records, per-bag
/// predictions and the pairing metadata needed for method comparison.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: Method,
    pub master_seed: u64,
    pub repetitions: usize,
    pub k: usize,
    /// Hash of the fold plans; equal hashes mean two runs saw the same
    /// train/test splits and can be compared pairwise.
    pub plan_hash: u64,
    pub records: Vec<MetricRecord>,
    pub predictions: Vec<PredictionRecord>,
}

/// Mean +/- SEM for one metric, aggregated at the repetition level.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    /// Repetitions contributing at least one defined fold value.
    pub n_repetitions: usize,
    /// Folds whose value was undefined and excluded.
    pub undefined_folds: usize,
}

impl EvalReport {
    fn metric_of(record: &MetricRecord, metric: &str) -> Option<f64> {
        match metric {
            "recall" => record.recall,
            "accuracy" => record.accuracy,
            "ppv" => record.ppv,
            "npv" => record.npv,
            "auc" => record.auc,
            _ => unreachable!("unknown metric {metric}"),
        }
    }

    /// Repetition-level values for one metric: the mean over that
    /// repetition's defined fold values, `None` when every fold was
    /// undefined.
    pub fn repetition_values(&self, metric: &str) -> Vec<Option<f64>> {
        (0..self.repetitions)
            .map(|rep| {
                let vals: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.repetition == rep)
                    .filter_map(|r| Self::metric_of(r, metric))
                    .collect();
                aggregate_mean_sem(&vals).map(|(mean, _)| mean)
            })
            .collect()
    }

    /// Mean/SEM per metric over repetition-level values (default
    /// aggregation) or over raw fold values when `fold_level` is set.
    pub fn summary(&self, fold_level: bool) -> Vec<MetricSummary> {
        METRIC_NAMES
            .iter()
            .map(|&metric| {
                let undefined_folds = self
                    .records
                    .iter()
                    .filter(|r| Self::metric_of(r, metric).is_none())
                    .count();
                let values: Vec<f64> = if fold_level {
                    self.records
                        .iter()
                        .filter_map(|r| Self::metric_of(r, metric))
                        .collect()
                } else {
                    self.repetition_values(metric).into_iter().flatten().collect()
                };
                let (mean, sem) = match aggregate_mean_sem(&values) {
                    Some((m, s)) => (Some(m), s),
                    None => (None, None),
                };
                MetricSummary {
                    metric,
                    mean,
                    sem,
                    n_repetitions: values.len(),
                    undefined_folds,
                }
            })
            .collect()
    }
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

fn hash_plans(plans: &[FoldPlan]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for plan in plans {
        fnv1a(&mut h, &plan.repetition.to_le_bytes());
        fnv1a(&mut h, &plan.fold.to_le_bytes());
        for id in &plan.test_ids {
            fnv1a(&mut h, id.as_bytes());
            fnv1a(&mut h, b"\x1f");
        }
    }
    h
}

fn worker_threads() -> usize {
    std::env::var("ATTNMIL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

/// Runs the full protocol: for every (repetition, fold) fit the
/// standardizer on the training fold, oversample it when
/// `config.oversample_count > 0`, train the chosen method and score the
/// test fold. Cells may run on up to `ATTNMIL_THREADS` worker threads;
/// the report does not depend on the thread count.
pub fn run_crossval(
    dataset: &MilDataset,
    method: Method,
    config: &TrainConfig,
    options: &CrossvalOptions,
) -> Result<EvalReport> {
    config.validate()?;
    let mut plans = Vec::with_capacity(options.repetitions * options.k);
    for rep in 0..options.repetitions {
        let seed = derive_seed(options.master_seed, &[rep as u64]);
        plans.extend(stratified_kfold(dataset, options.k, rep, seed)?);
    }
    let plan_hash = hash_plans(&plans);
    let by_id: HashMap<&str, &Bag> = dataset.bags.iter().map(|b| (b.bag_id.as_str(), b)).collect();

    let n_cells = plans.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(MetricRecord, Vec<PredictionRecord>)>>>> =
        Mutex::new((0..n_cells).map(|_| None).collect());
    let threads = worker_threads().min(n_cells);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_cells {
                    break;
                }
                let outcome = run_cell(&plans[i], &by_id, method, config, options);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let mut records = Vec::with_capacity(n_cells);
    let mut predictions = Vec::new();
    for cell in results.into_inner().unwrap() {
        let (record, preds) = cell.expect("every cell executed")?;
        records.push(record);
        predictions.extend(preds);
    }
    Ok(EvalReport {
        method,
        master_seed: options.master_seed,
        repetitions: options.repetitions,
        k: options.k,
        plan_hash,
        records,
        predictions,
    })
}

fn run_cell(
    plan: &FoldPlan,
    by_id: &HashMap<&str, &Bag>,
    method: Method,
    config: &TrainConfig,
    options: &CrossvalOptions,
) -> Result<(MetricRecord, Vec<PredictionRecord>)> {
    let collect = |ids: &[String]| -> Vec<Bag> {
        ids.iter().map(|id| (*by_id[id.as_str()]).clone()).collect()
    };
    let mut train_bags = collect(&plan.train_ids);
    let mut test_bags = collect(&plan.test_ids);

    if config.standardize {
        let standardizer = fit_standardizer(&train_bags)?;
        for bag in train_bags.iter_mut().chain(test_bags.iter_mut()) {
            *bag = apply_standardizer(&standardizer, bag)?;
        }
    }
    if config.oversample_count > 0 {
        let mut rng = Rng::from_seed(derive_seed(
            options.master_seed,
            &[plan.repetition as u64, plan.fold as u64, 7],
        ));
        train_bags = oversample_negative_bags(
            &train_bags,
            config.oversample_count,
            options.size_policy,
            &mut rng,
        )?;
    }
    if config.pad_duplicate {
        for bag in train_bags.iter_mut().chain(test_bags.iter_mut()) {
            *bag = pad_bag_duplicate(bag, config.pad_target.max(bag.len()))?;
        }
    }

    let cell_cfg = TrainConfig {
        seed: derive_seed(
            options.master_seed,
            &[plan.repetition as u64, plan.fold as u64, 13],
        ),
        ..config.clone()
    };

    let mut predictions = Vec::with_capacity(test_bags.len());
    match method {
        Method::AttentionMil => {
            let (model, _) = train_attention_mil(&train_bags, &cell_cfg)?;
            for bag in &test_bags {
                let (p, label, report) = predict_bag(&model, bag)?;
                predictions.push(PredictionRecord {
                    repetition: plan.repetition,
                    fold: plan.fold,
                    bag_id: bag.bag_id.clone(),
                    score: p,
                    true_label: bag.label.as_u8(),
                    predicted_label: label,
                    attention: Some(report.weights),
                });
            }
        }
        Method::MiNet => {
            let (model, _) = train_minet(&train_bags, &cell_cfg)?;
            for bag in &test_bags {
                let (p, label) = predict_minet(&model, bag)?;
                predictions.push(PredictionRecord {
                    repetition: plan.repetition,
                    fold: plan.fold,
                    bag_id: bag.bag_id.clone(),
                    score: p,
                    true_label: bag.label.as_u8(),
                    predicted_label: label,
                    attention: None,
                });
            }
        }
        Method::MiSvm => {
            let mut rng = Rng::from_seed(cell_cfg.seed);
            let model = train_misvm(
                &train_bags,
                cell_cfg.svm_lambda,
                cell_cfg.svm_inner_epochs,
                cell_cfg.svm_max_outer_iters,
                &mut rng,
            )?;
            for bag in &test_bags {
                let (score, label) = misvm_score(&model, bag)?;
                predictions.push(PredictionRecord {
                    repetition: plan.repetition,
                    fold: plan.fold,
                    bag_id: bag.bag_id.clone(),
                    score,
                    true_label: bag.label.as_u8(),
                    predicted_label: label,
                    attention: None,
                });
            }
        }
    }

    let predicted: Vec<u8> = predictions.iter().map(|p| p.predicted_label).collect();
    let truth: Vec<u8> = predictions.iter().map(|p| p.true_label).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let mut record = confusion_metrics(&predicted, &truth)?;
    record.repetition = plan.repetition;
    record.fold = plan.fold;
    record.auc = roc_auc(&scores, &truth)?.map(|(auc, _)| auc);
    Ok((record, predictions))
}

/// Paired Wilcoxon comparison of one metric between two reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub metric: &'static str,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    /// "a", "b" or "tie" by repetition-level mean.
    pub direction: &'static str,
    pub p_value: Option<f64>,
    pub n_pairs: usize,
}

/// Compares two reports metric by metric with the paired two-sided
/// Wilcoxon test over repetition-level values. Refuses reports that do
/// not share the same master seed, repetition count, fold count and fold
/// plans.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Vec<MetricComparison>> {
    if a.repetitions != b.repetitions {
        return Err(Error::UnpairedReports(format!(
            "repetitions {} vs {}",
            a.repetitions, b.repetitions
        )));
    }
    if a.master_seed != b.master_seed {
        return Err(Error::UnpairedReports(format!(
            "master seed {} vs {}",
            a.master_seed, b.master_seed
        )));
    }
    if a.k != b.k {
        return Err(Error::UnpairedReports(format!("k {} vs {}", a.k, b.k)));
    }
    if a.plan_hash != b.plan_hash {
        return Err(Error::UnpairedReports(
            "fold plans differ (plan hash mismatch)".into(),
        ));
    }
    let mut out = Vec::with_capacity(METRIC_NAMES.len());
    for metric in METRIC_NAMES {
        let va = a.repetition_values(metric);
        let vb = b.repetition_values(metric);
        let pairs: Vec<(f64, f64)> = va
            .iter()
            .zip(&vb)
            .filter_map(|(x, y)| x.zip(*y))
            .collect();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let p_value = if pairs.is_empty() {
            None
        } else {
            Some(wilcoxon_signed_rank(&xs, &ys)?)
        };
        let mean_a = aggregate_mean_sem(&xs).map(|(m, _)| m);
        let mean_b = aggregate_mean_sem(&ys).map(|(m, _)| m);
        let direction = match (mean_a, mean_b) {
            (Some(ma), Some(mb)) if ma > mb => "a",
            (Some(ma), Some(mb)) if mb > ma => "b",
            (Some(_), Some(_)) => "tie",
            _ => "undefined",
        };
        out.push(MetricComparison {
            metric,
            mean_a,
            mean_b,
            direction,
            p_value,
            n_pairs: pairs.len(),
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

impl EvalReport {
    /// Per-fold records as CSV (empty cell = undefined metric).
    pub fn records_csv(&self) -> String {
        let mut out =
            String::from("repetition,fold,method,tp,fp,tn,fn,recall,accuracy,ppv,npv,auc\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.repetition,
                r.fold,
                self.method.name(),
                r.tp,
                r.fp,
                r.tn,
                r.fn_,
                fmt_opt(r.recall),
                fmt_opt(r.accuracy),
                fmt_opt(r.ppv),
                fmt_opt(r.npv),
                fmt_opt(r.auc),
            );
        }
        out
    }

    /// Summary CSV: mean +/- SEM per metric plus pairing metadata rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,sem,n_repetitions,undefined_folds\n");
        for s in self.summary(false) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.metric,
                fmt_opt(s.mean),
                fmt_opt(s.sem),
                s.n_repetitions,
                s.undefined_folds
            );
        }
        let _ = writeln!(out, "method,{},,,", self.method.name());
        let _ = writeln!(out, "master_seed,{},,,", self.master_seed);
        let _ = writeln!(out, "repetitions,{},,,", self.repetitions);
        let _ = writeln!(out, "folds,{},,,", self.k);
        let _ = writeln!(out, "plan_hash,{:016x},,,", self.plan_hash);
        out
    }

    /// ROC polylines per (repetition, fold), as point rows.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("repetition,fold,fpr,tpr\n");
        for r in &self.records {
            let cell: Vec<&PredictionRecord> = self
                .predictions
                .iter()
                .filter(|p| p.repetition == r.repetition && p.fold == r.fold)
                .collect();
            let scores: Vec<f64> = cell.iter().map(|p| p.score).collect();
            let truth: Vec<u8> = cell.iter().map(|p| p.true_label).collect();
            if let Ok(Some((_, points))) = roc_auc(&scores, &truth) {
                for pt in points {
                    let _ = writeln!(out, "{},{},{:.6},{:.6}", r.repetition, r.fold, pt.fpr, pt.tpr);
                }
            }
        }
        out
    }

    /// Pooled calibration curve over all test predictions. Empty (header
    /// only) for MI-SVM whose scores are margins, not probabilities.
    pub fn calibration_csv(&self, n_bins: usize) -> String {
        let mut out = String::from("bin_center,mean_predicted,observed_fraction,count\n");
        if self.method == Method::MiSvm {
            return out;
        }
        let probs: Vec<f64> = self.predictions.iter().map(|p| p.score).collect();
        let truth: Vec<u8> = self.predictions.iter().map(|p| p.true_label).collect();
        if let Ok(bins) = calibration_curve(&probs, &truth, n_bins) {
            for b in bins {
                let _ = writeln!(
                    out,
                    "{:.6},{:.6},{:.6},{}",
                    b.center, b.mean_predicted, b.observed_fraction, b.count
                );
            }
        }
        out
    }

    /// Per-prediction rows (used by compare tooling and tests).
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("repetition,fold,bag_id,score,true_label,predicted_label\n");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{},{},{},{:.17e},{},{}",
                p.repetition, p.fold, p.bag_id, p.score, p.true_label, p.predicted_label
            );
        }
        out
    }
}

/// Renders a comparison as CSV.
pub fn comparison_csv(
    method_a: &str,
    method_b: &str,
    comparisons: &[MetricComparison],
) -> String {
    let mut out = String::from("metric,mean_a,mean_b,direction,p_value,n_pairs\n");
    for c in comparisons {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.metric,
            fmt_opt(c.mean_a),
            fmt_opt(c.mean_b),
            c.direction,
            fmt_opt(c.p_value),
            c.n_pairs
        );
    }
    let _ = writeln!(out, "method_a,{method_a},,,,");
    let _ = writeln!(out, "method_b,{method_b},,,,");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            hidden_dims: vec![8],
            embed_dim: 4,
            attention_dim: 3,
            dropout_rate: 0.0,
            ..Default::default()
        }
    }

    fn small_dataset() -> MilDataset {
        generate_synthetic(&SyntheticSpec {
            n_pos: 12,
            n_neg: 8,
            feature_dim: 6,
            witness_shift: 2.0,
            n_signal_dims: 3,
            seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn record_counts_match_protocol_shape() {
        let ds = small_dataset();
        let options = CrossvalOptions {
            repetitions: 3,
            k: 4,
            master_seed: 5,
            ..Default::default()
        };
        let report = run_crossval(&ds, Method::MiSvm, &quick_cfg(), &options).unwrap();
        assert_eq!(report.records.len(), 12);
        assert_eq!(report.predictions.len(), 3 * 20);
    }

    #[test]
    fn deterministic_reports() {
        let ds = small_dataset();
        let options = CrossvalOptions {
            repetitions: 2,
            k: 3,
            master_seed: 9,
            ..Default::default()
        };
        let a = run_crossval(&ds, Method::AttentionMil, &quick_cfg(), &options).unwrap();
        let b = run_crossval(&ds, Method::AttentionMil, &quick_cfg(), &options).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.plan_hash, b.plan_hash);
    }

    #[test]
    fn no_synthetic_bags_in_test_folds() {
        let ds = small_dataset();
        let options = CrossvalOptions {
            repetitions: 2,
            k: 3,
            master_seed: 1,
            ..Default::default()
        };
        let cfg = TrainConfig {
            oversample_count: 10,
            ..quick_cfg()
        };
        let report = run_crossval(&ds, Method::MiNet, &cfg, &options).unwrap();
        for p in &report.predictions {
            assert!(!p.bag_id.starts_with("synthetic:"));
        }
    }

    #[test]
    fn self_comparison_is_all_ones() {
        let ds = small_dataset();
        let options = CrossvalOptions {
            repetitions: 2,
            k: 3,
            master_seed: 2,
            ..Default::default()
        };
        let report = run_crossval(&ds, Method::MiSvm, &quick_cfg(), &options).unwrap();
        for c in compare_reports(&report, &report).unwrap() {
            if c.p_value.is_some() {
                assert_eq!(c.p_value, Some(1.0), "{}", c.metric);
            }
        }
    }

    #[test]
    fn unpaired_reports_rejected() {
        let ds = small_dataset();
        let cfg = quick_cfg();
        let a = run_crossval(
            &ds,
            Method::MiSvm,
            &cfg,
            &CrossvalOptions {
                repetitions: 2,
                k: 3,
                master_seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let b = run_crossval(
            &ds,
            Method::MiSvm,
            &cfg,
            &CrossvalOptions {
                repetitions: 2,
                k: 3,
                master_seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(compare_reports(&a, &b).is_err());
    }

    #[test]
    fn summary_has_all_metrics() {
        let ds = small_dataset();
        let report = run_crossval(
            &ds,
            Method::MiNet,
            &quick_cfg(),
            &CrossvalOptions {
                repetitions: 2,
                k: 3,
                master_seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let summary = report.summary(false);
        assert_eq!(summary.len(), 5);
        for s in &summary {
            assert!(s.mean.is_some(), "{} has no mean", s.metric);
        }
    }
}
