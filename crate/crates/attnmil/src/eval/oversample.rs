//! Negative-bag oversampling: synthetic negative bags assembled by
//! resampling instances (with replacement) from the pooled instances of
//! the negative training bags. Applied to training data only; synthetic
//! bag ids carry a `synthetic:` prefix so leakage into test folds is
//! detectable.

use crate::dataset::{Bag, Instance, Label};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// How the size of each synthetic bag is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizePolicy {
    /// Sample from the empirical negative-bag-size distribution (default).
    Empirical,
    /// Uniform on [1, max negative bag size].
    Uniform,
}

/// Appends `s` synthetic negative bags to a copy of `train_bags`.
/// `s = 0` returns the input unchanged.
pub fn oversample_negative_bags(
    train_bags: &[Bag],
    s: usize,
    size_policy: SizePolicy,
    rng: &mut Rng,
) -> Result<Vec<Bag>> {
    let mut out = train_bags.to_vec();
    if s == 0 {
        return Ok(out);
    }
    let negative_sizes: Vec<usize> = train_bags
        .iter()
        .filter(|b| !b.label.is_positive())
        .map(|b| b.len())
        .collect();
    if negative_sizes.is_empty() {
        return Err(Error::NoNegativePool);
    }
    let pool: Vec<&Instance> = train_bags
        .iter()
        .filter(|b| !b.label.is_positive())
        .flat_map(|b| b.instances.iter())
        .collect();
    let max_size = *negative_sizes.iter().max().unwrap();
    for i in 0..s {
        let size = match size_policy {
            SizePolicy::Empirical => negative_sizes[rng.next_range(0, negative_sizes.len() - 1)],
            SizePolicy::Uniform => rng.next_range(1, max_size),
        };
        let instances = (0..size)
            .map(|_| pool[rng.next_range(0, pool.len() - 1)].clone())
            .collect();
        out.push(Bag::new(format!("synthetic:{i}"), Label::Negative, instances));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bags() -> Vec<Bag> {
        let mut out = Vec::new();
        for i in 0..5 {
            out.push(Bag::new(
                format!("p{i}"),
                Label::Positive,
                vec![Instance::new(vec![i as f64, 1.0])],
            ));
        }
        for i in 0..3 {
            out.push(Bag::new(
                format!("n{i}"),
                Label::Negative,
                vec![
                    Instance::new(vec![-(i as f64), 0.0]),
                    Instance::new(vec![-(i as f64), -1.0]),
                ],
            ));
        }
        out
    }

    #[test]
    fn zero_is_noop() {
        let input = bags();
        let out =
            oversample_negative_bags(&input, 0, SizePolicy::Empirical, &mut Rng::from_seed(1))
                .unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn counts_add_up() {
        let out =
            oversample_negative_bags(&bags(), 60, SizePolicy::Empirical, &mut Rng::from_seed(1))
                .unwrap();
        assert_eq!(out.len(), 8 + 60);
        let synthetic = out
            .iter()
            .filter(|b| b.bag_id.starts_with("synthetic:"))
            .count();
        assert_eq!(synthetic, 60);
    }

    #[test]
    fn synthetic_instances_come_from_negative_pool() {
        let input = bags();
        let pool: Vec<&Instance> = input
            .iter()
            .filter(|b| !b.label.is_positive())
            .flat_map(|b| b.instances.iter())
            .collect();
        let out =
            oversample_negative_bags(&input, 30, SizePolicy::Uniform, &mut Rng::from_seed(2))
                .unwrap();
        for bag in out.iter().filter(|b| b.bag_id.starts_with("synthetic:")) {
            assert!(!bag.label.is_positive());
            for inst in &bag.instances {
                assert!(pool.iter().any(|p| **p == *inst), "{inst:?} not in pool");
            }
        }
    }

    #[test]
    fn empirical_sizes_match_distribution_support() {
        let out =
            oversample_negative_bags(&bags(), 40, SizePolicy::Empirical, &mut Rng::from_seed(3))
                .unwrap();
        for bag in out.iter().filter(|b| b.bag_id.starts_with("synthetic:")) {
            assert_eq!(bag.len(), 2); // all negative bags have 2 instances
        }
    }

    #[test]
    fn no_negatives_rejected() {
        let positives: Vec<Bag> = bags()
            .into_iter()
            .filter(|b| b.label.is_positive())
            .collect();
        let err = oversample_negative_bags(
            &positives,
            5,
            SizePolicy::Empirical,
            &mut Rng::from_seed(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoNegativePool));
    }

    #[test]
    fn originals_untouched() {
        let input = bags();
        let out =
            oversample_negative_bags(&input, 10, SizePolicy::Empirical, &mut Rng::from_seed(4))
                .unwrap();
        assert_eq!(&out[..input.len()], &input[..]);
    }
}
