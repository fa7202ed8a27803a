//! MI-SVM baseline: alternate between selecting one witness instance per
//! positive bag (the instance with the highest decision value) and
//! fitting a linear SVM on the witnesses plus all negative instances.
//! The inner solver is sub-gradient descent on the lambda-regularized
//! hinge objective; the bag score is the maximum instance decision
//! value.

use crate::dataset::Bag;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::trainer::check_both_classes;

#[derive(Debug, Clone, PartialEq)]
pub struct MiSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl MiSvmModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Bag score is the maximum instance decision value; label 1 iff the
/// score is >= 0.
pub fn misvm_score(model: &MiSvmModel, bag: &Bag) -> Result<(f64, u8)> {
    if bag.is_empty() {
        return Err(Error::EmptyBag {
            bag_id: bag.bag_id.clone(),
        });
    }
    let mut score = f64::NEG_INFINITY;
    for inst in &bag.instances {
        if inst.dim() != model.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.feature_dim(),
                got: inst.dim(),
            });
        }
        score = score.max(model.decision(&inst.features));
    }
    Ok((score, (score >= 0.0) as u8))
}

/// Pegasos-style sub-gradient descent on
/// `lambda/2 ||w||^2 + mean_i hinge(y_i f(x_i))`. The bias is updated on
/// margin violations but not regularized.
fn fit_linear_svm(
    samples: &[(&[f64], f64)],
    lambda: f64,
    epochs: usize,
    rng: &mut Rng,
) -> MiSvmModel {
    let dim = samples[0].0.len();
    let mut model = MiSvmModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        lambda,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut t = 0u64;
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            t += 1;
            let (x, y) = samples[i];
            let eta = 1.0 / (lambda * t as f64);
            let margin = y * model.decision(x);
            let shrink = 1.0 - eta * lambda;
            for w in &mut model.weights {
                *w *= shrink;
            }
            if margin < 1.0 {
                for (w, &v) in model.weights.iter_mut().zip(x) {
                    *w += eta * y * v;
                }
                model.bias += eta * y;
            }
        }
    }
    model
}

/// Witness alternation: start from all positive instances labeled
/// positive, then repeatedly (a) pick the top-scoring instance of each
/// positive bag, (b) refit on witnesses + negatives, until the witness
/// selection stabilizes or `max_outer_iters` is reached.
pub fn train_misvm(
    train_bags: &[Bag],
    lambda: f64,
    inner_epochs: usize,
    max_outer_iters: usize,
    rng: &mut Rng,
) -> Result<MiSvmModel> {
    check_both_classes(train_bags)?;
    if lambda <= 0.0 {
        return Err(Error::InvalidConfig("lambda must be > 0".into()));
    }
    let positives: Vec<&Bag> = train_bags.iter().filter(|b| b.label.is_positive()).collect();
    let negative_instances: Vec<&[f64]> = train_bags
        .iter()
        .filter(|b| !b.label.is_positive())
        .flat_map(|b| b.instances.iter().map(|i| i.features.as_slice()))
        .collect();

    // iteration 0: every positive instance counts as positive
    let mut samples: Vec<(&[f64], f64)> = Vec::new();
    for bag in &positives {
        for inst in &bag.instances {
            samples.push((inst.features.as_slice(), 1.0));
        }
    }
    for &x in &negative_instances {
        samples.push((x, -1.0));
    }
    let mut model = fit_linear_svm(&samples, lambda, inner_epochs, rng);

    let mut witnesses: Vec<usize> = positives.iter().map(|b| select_witness(&model, b)).collect();
    for _ in 0..max_outer_iters {
        let mut samples: Vec<(&[f64], f64)> = positives
            .iter()
            .zip(&witnesses)
            .map(|(b, &w)| (b.instances[w].features.as_slice(), 1.0))
            .collect();
        for &x in &negative_instances {
            samples.push((x, -1.0));
        }
        model = fit_linear_svm(&samples, lambda, inner_epochs, rng);
        let next: Vec<usize> = positives.iter().map(|b| select_witness(&model, b)).collect();
        if next == witnesses {
            break;
        }
        witnesses = next;
    }
    Ok(model)
}

fn select_witness(model: &MiSvmModel, bag: &Bag) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, inst) in bag.instances.iter().enumerate() {
        let s = model.decision(&inst.features);
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, Label};

    fn bag1d(id: &str, label: Label, values: &[f64]) -> Bag {
        Bag::new(
            id,
            label,
            values.iter().map(|&v| Instance::new(vec![v])).collect(),
        )
    }

    #[test]
    fn separable_1d_learns_positive_weight() {
        let mut bags = Vec::new();
        for i in 0..8 {
            bags.push(bag1d(&format!("p{i}"), Label::Positive, &[1.0, -1.0]));
            bags.push(bag1d(&format!("n{i}"), Label::Negative, &[-1.0, -1.2]));
        }
        let mut rng = Rng::from_seed(1);
        let model = train_misvm(&bags, 0.001, 200, 20, &mut rng).unwrap();
        assert!(model.weights[0] > 0.0, "w = {:?}", model.weights);
        for bag in &bags {
            let (_, label) = misvm_score(&model, bag).unwrap();
            assert_eq!(label, bag.label.as_u8(), "bag {}", bag.bag_id);
        }
    }

    #[test]
    fn single_instance_positive_bags_is_plain_svm() {
        // witness selection has exactly one choice per bag
        let mut bags = Vec::new();
        for i in 0..5 {
            bags.push(bag1d(&format!("p{i}"), Label::Positive, &[2.0 + i as f64 * 0.1]));
            bags.push(bag1d(&format!("n{i}"), Label::Negative, &[-2.0 - i as f64 * 0.1]));
        }
        let model = train_misvm(&bags, 0.01, 200, 20, &mut Rng::from_seed(2)).unwrap();
        for bag in &bags {
            let (_, label) = misvm_score(&model, bag).unwrap();
            assert_eq!(label, bag.label.as_u8());
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let mut bags = Vec::new();
        for i in 0..4 {
            bags.push(bag1d(&format!("p{i}"), Label::Positive, &[1.0, 0.3]));
            bags.push(bag1d(&format!("n{i}"), Label::Negative, &[-0.8]));
        }
        let a = train_misvm(&bags, 0.01, 100, 10, &mut Rng::from_seed(7)).unwrap();
        let b = train_misvm(&bags, 0.01, 100, 10, &mut Rng::from_seed(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_boundary_label() {
        let model = MiSvmModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            lambda: 0.01,
        };
        let bag = Bag::new(
            "b",
            Label::Negative,
            vec![Instance::new(vec![3.0, -1.0])],
        );
        let (score, label) = misvm_score(&model, &bag).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(label, 1); // inclusive threshold
    }

    #[test]
    fn hand_scored_bag() {
        let model = MiSvmModel {
            weights: vec![1.0, 0.0],
            bias: -0.5,
            lambda: 0.01,
        };
        let bag = Bag::new(
            "b",
            Label::Positive,
            vec![Instance::new(vec![0.0, 9.0]), Instance::new(vec![1.0, 0.0])],
        );
        let (score, label) = misvm_score(&model, &bag).unwrap();
        assert_eq!(score, 0.5);
        assert_eq!(label, 1);
    }

    #[test]
    fn max_rule_over_sub_bags() {
        let model = MiSvmModel {
            weights: vec![0.7, -0.2],
            bias: 0.1,
            lambda: 0.01,
        };
        let bag = Bag::new(
            "b",
            Label::Positive,
            vec![
                Instance::new(vec![0.4, 1.0]),
                Instance::new(vec![-2.0, 0.0]),
                Instance::new(vec![1.5, -0.5]),
            ],
        );
        let (score, _) = misvm_score(&model, &bag).unwrap();
        let max_single = bag
            .instances
            .iter()
            .map(|i| {
                let sub = Bag::new("s", Label::Positive, vec![i.clone()]);
                misvm_score(&model, &sub).unwrap().0
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(score, max_single);
    }

    #[test]
    fn single_class_rejected() {
        let bags = vec![bag1d("p", Label::Positive, &[1.0])];
        assert!(train_misvm(&bags, 0.01, 10, 5, &mut Rng::from_seed(1)).is_err());
    }
}
