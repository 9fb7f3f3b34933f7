//! Dense feed-forward network: activations, loss, forward and backward
//! passes, and the binary model format.
//!
//! Layers compute `activation(W a + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Hidden layers use ReLU and the output layer uses a
//! max-shifted softmax. Training minimizes the mean sparse cross-entropy of a
//! batch.

mod format;
mod network;

pub use format::{load_network, read_network, save_network, write_network, MODEL_MAGIC};
pub use network::{
    Activation, DenseNetwork, ForwardTrace, GradientSet, Layer, NetworkSpec, DEFAULT_WIDTHS,
};

use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn relu(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("relu input is not finite"));
    }
    Ok(x.iter().map(|&v| v.max(0.0)).collect())
}

pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::validation("softmax of an empty vector"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("softmax input is not finite"));
    }
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn sparse_ce_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::validation(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(relu(&[2.5]).unwrap(), vec![2.5]);
        assert_eq!(relu(&[-1.0, 0.0, 4.2]).unwrap(), vec![0.0, 0.0, 4.2]);
        assert!(matches!(relu(&[f64::NAN]), Err(Error::Validation(_))));
        assert!(relu(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[1000.0, 1000.0, 1000.0]).unwrap() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        // mpmath, 30 digits
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
        for (p, e) in softmax(&[1.0, 2.0, 3.0]).unwrap().iter().zip(expected) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-15);
        }
        assert!(matches!(softmax(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(sparse_ce_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            sparse_ce_loss(&[0.2; 5], 3).unwrap(),
            1.609_437_912_434_100_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sparse_ce_loss(&[0.7, 0.3], 1).unwrap(),
            1.203_972_804_325_936,
            epsilon = 1e-12
        );
        assert!(matches!(sparse_ce_loss(&[0.5, 0.5], 2), Err(Error::Validation(_))));
        // clamp keeps the loss finite
        assert_abs_diff_eq!(sparse_ce_loss(&[1.0, 0.0], 1).unwrap(), -PROB_FLOOR.ln());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(z in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let p = softmax(&z).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn softmax_is_shift_invariant(
            z in prop::collection::vec(-100.0f64..100.0, 1..20),
            shift in -50.0f64..50.0,
        ) {
            let a = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn relu_is_idempotent(x in prop::collection::vec(-1e6f64..1e6, 0..32)) {
            let once = relu(&x).unwrap();
            prop_assert_eq!(relu(&once).unwrap(), once);
        }

        #[test]
        fn loss_is_nonnegative(
            raw in prop::collection::vec(0.0f64..1.0, 2..8),
            pick in 0usize..8,
        ) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let probs: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / total).collect();
            let label = pick % probs.len();
            let loss = sparse_ce_loss(&probs, label).unwrap();
            prop_assert!(loss >= 0.0);
            if probs[label] < 1.0 {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
