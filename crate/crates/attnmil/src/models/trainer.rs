//! Shared SGD training loop for the neural bag classifiers. Batch size
//! is 1: every bag triggers one forward, one backward and one parameter
//! update per epoch.

use crate::dataset::Bag;
use crate::error::{Error, Result};
use crate::rng::Rng;

const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with the probability clamped to
/// [1e-12, 1 - 1e-12] before the logarithm. Returns the loss and
/// d(loss)/d(probability).
pub fn bce_loss(probability: f64, label: u8) -> (f64, f64) {
    let p = probability.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = label as f64;
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = -y / p + (1.0 - y) / (1.0 - p);
    (loss, grad)
}

/// A bag classifier trainable by per-bag SGD on BCE loss.
pub(crate) trait Trainable {
    type Tape;
    type Grads;

    fn forward_train(&self, bag: &Bag, rng: &mut Rng) -> Result<(f64, Self::Tape)>;
    fn backward(&self, tape: &Self::Tape, loss_grad: f64) -> Result<Self::Grads>;
    fn apply_grads(&mut self, grads: &Self::Grads, learning_rate: f64);
}

/// Runs `epochs` passes over the training bags: seeded shuffle, then one
/// SGD step per bag. Returns the mean BCE loss per epoch. Errors if one
/// class is missing.
pub(crate) fn train_bag_model<M: Trainable>(
    model: &mut M,
    train_bags: &[Bag],
    epochs: usize,
    learning_rate: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_both_classes(train_bags)?;
    let mut order: Vec<usize> = (0..train_bags.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let bag = &train_bags[i];
            let (p, tape) = model.forward_train(bag, rng)?;
            let (loss, dp) = bce_loss(p, bag.label.as_u8());
            let grads = model.backward(&tape, dp)?;
            model.apply_grads(&grads, learning_rate);
            epoch_loss += loss;
        }
        log.push(epoch_loss / train_bags.len() as f64);
    }
    Ok(log)
}

pub(crate) fn check_both_classes(bags: &[Bag]) -> Result<()> {
    if !bags.iter().any(|b| b.label.is_positive()) {
        return Err(Error::SingleClass {
            missing: "positive",
        });
    }
    if !bags.iter().any(|b| !b.label.is_positive()) {
        return Err(Error::SingleClass {
            missing: "negative",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_symmetric_point() {
        let (loss0, _) = bce_loss(0.5, 0);
        let (loss1, _) = bce_loss(0.5, 1);
        assert!((loss0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss0, loss1);
    }

    #[test]
    fn bce_confident_correct_near_zero() {
        let (loss, _) = bce_loss(1.0 - 1e-12, 1);
        assert!(loss < 1e-11);
    }

    #[test]
    fn bce_hand_value() {
        let (loss, _) = bce_loss(0.2, 1);
        assert!((loss - 1.6094).abs() < 1e-4);
        assert!((loss + 0.2_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let (loss, grad) = bce_loss(0.0, 1);
        assert!(loss.is_finite() && grad.is_finite());
        let (loss, grad) = bce_loss(1.0, 0);
        assert!(loss.is_finite() && grad.is_finite());
    }
}
