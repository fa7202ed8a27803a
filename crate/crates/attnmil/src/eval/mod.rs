//! Resampling, oversampling, metrics and the cross-validation driver.

mod crossval;
mod folds;
mod metrics;
mod oversample;
mod wilcoxon;

pub use crossval::{
    compare_reports, comparison_csv, run_crossval, CrossvalOptions, EvalReport, MetricComparison,
    PredictionRecord, METRIC_NAMES,
};
pub use folds::{stratified_kfold, FoldPlan};
pub use metrics::{
    aggregate_mean_sem, calibration_curve, confusion_metrics, roc_auc, CalibrationBin,
    MetricRecord, RocPoint,
};
pub use oversample::{oversample_negative_bags, SizePolicy};
pub use wilcoxon::wilcoxon_signed_rank;
