//! Confusion metrics, ROC/AUC by the Mann-Whitney pair rule, calibration
//! curves and mean/SEM aggregation. Metrics with a zero denominator are
//! reported as an explicit undefined marker (`None`), never as 0 or 1.

use crate::error::{Error, Result};

/// Per-fold metric record. `None` marks an undefined metric (zero
/// denominator, or single-class test fold for AUC).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub repetition: usize,
    pub fold: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub auc: Option<f64>,
}

/// Builds the confusion counts and derived metrics over paired predicted
/// and true labels; the positive class is label 1.
pub fn confusion_metrics(predicted: &[u8], truth: &[u8]) -> Result<MetricRecord> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            a: predicted.len(),
            b: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "labels must be 0 or 1, got predicted {p} / true {t}"
                )))
            }
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MetricRecord {
        repetition: 0,
        fold: 0,
        tp,
        fp,
        tn,
        fn_,
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        auc: None,
    })
}

/// One point of the ROC polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// AUC by the Mann-Whitney pair rule (ties credit 0.5, computed via
/// mid-ranks) plus the ROC polyline with a point at every distinct score
/// threshold and the (0,0)/(1,1) anchors. Returns `None` when only one
/// class is present.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<Option<(f64, Vec<RocPoint>)>> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            a: scores.len(),
            b: truth.len(),
        });
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }

    // mid-rank sum over positives
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &t in &idx[i..=j] {
            if truth[t] == 1 {
                rank_sum_pos += mid_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auc = u / (n_pos as f64 * n_neg as f64);

    // ROC polyline, descending thresholds
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = idx.len();
    while i > 0 {
        let score = scores[idx[i - 1]];
        while i > 0 && scores[idx[i - 1]] == score {
            if truth[idx[i - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(Some((auc, points)))
}

/// One occupied calibration bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBin {
    pub center: f64,
    pub mean_predicted: f64,
    pub observed_fraction: f64,
    pub count: usize,
}

/// Equal-width reliability bins on [0, 1]; the right edge falls in the
/// last bin; empty bins are omitted.
pub fn calibration_curve(
    probabilities: &[f64],
    truth: &[u8],
    n_bins: usize,
) -> Result<Vec<CalibrationBin>> {
    if probabilities.len() != truth.len() {
        return Err(Error::LengthMismatch {
            a: probabilities.len(),
            b: truth.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be >= 1".into()));
    }
    let mut sums = vec![(0.0f64, 0usize, 0usize); n_bins]; // (sum p, positives, count)
    for (&p, &t) in probabilities.iter().zip(truth) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let bin = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sums[bin].0 += p;
        sums[bin].1 += t as usize;
        sums[bin].2 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, _, count))| *count > 0)
        .map(|(bin, (sum_p, pos, count))| CalibrationBin {
            center: (bin as f64 + 0.5) / n_bins as f64,
            mean_predicted: sum_p / count as f64,
            observed_fraction: pos as f64 / count as f64,
            count,
        })
        .collect())
}

/// Mean and SEM over repetition-level values. SEM uses the sample
/// standard deviation (n-1 denominator) over sqrt(n); `None` when fewer
/// than two values are supplied.
pub fn aggregate_mean_sem(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, Some((var / n).sqrt())))
}
