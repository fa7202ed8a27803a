//! Stratified k-fold splitting. Bags are shuffled within class and dealt
//! round-robin, continuing the fold offset across classes so total fold
//! sizes stay balanced too.

use std::collections::HashSet;

use crate::dataset::MilDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Train/test bag-id split for one (repetition, fold) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub repetition: usize,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Splits the dataset into k stratified folds, deterministic in
/// `repetition_seed`. Per-fold class counts differ by at most one.
/// `k` equal to the number of bags gives leave-one-out.
pub fn stratified_kfold(
    dataset: &MilDataset,
    k: usize,
    repetition: usize,
    repetition_seed: u64,
) -> Result<Vec<FoldPlan>> {
    if k < 2 {
        return Err(Error::InvalidConfig("k must be >= 2".into()));
    }
    let n = dataset.bags.len();
    if k > n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds dataset size {n}"
        )));
    }
    // Leave-one-out is allowed even though classes then have fewer than
    // k bags; otherwise every class must fill each fold.
    if k < n {
        for label in [0u8, 1u8] {
            let count = dataset
                .bags
                .iter()
                .filter(|b| b.label.as_u8() == label)
                .count();
            if count < k {
                return Err(Error::TooFewBagsForFolds { label, count, k });
            }
        }
    }
    let mut rng = Rng::from_seed(repetition_seed);
    let mut fold_members: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut offset = 0usize;
    for label in [0u8, 1u8] {
        let mut ids: Vec<String> = dataset
            .bags
            .iter()
            .filter(|b| b.label.as_u8() == label)
            .map(|b| b.bag_id.clone())
            .collect();
        rng.shuffle(&mut ids);
        let count = ids.len();
        for (j, id) in ids.into_iter().enumerate() {
            fold_members[(offset + j) % k].push(id);
        }
        offset = (offset + count) % k;
    }
    let all_ids: Vec<String> = dataset.bags.iter().map(|b| b.bag_id.clone()).collect();
    let plans = (0..k)
        .map(|fold| {
            let test: HashSet<&String> = fold_members[fold].iter().collect();
            FoldPlan {
                repetition,
                fold,
                train_ids: all_ids.iter().filter(|id| !test.contains(id)).cloned().collect(),
                test_ids: fold_members[fold].clone(),
            }
        })
        .collect();
    Ok(plans)
}
