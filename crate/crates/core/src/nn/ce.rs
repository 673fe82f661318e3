use crate::error::{Error, Result};

/// `-log softmax(logits)[target]` and its gradient `softmax(logits) - one_hot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - log_z).exp()).collect();
    grad[target] -= 1.0;
    // Clamp rounding noise so the loss never goes negative.
    let loss = (log_z - logits[target]).max(0.0);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((grad[2] - (0.2 - 1.0)).abs() < 1e-12);
        assert!((grad[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class() {
        let (loss, _) = softmax_cross_entropy(&[10.0, -10.0, -10.0, -10.0, -10.0], 0).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn out_of_range_target() {
        assert!(softmax_cross_entropy(&[0.0; 5], 5).is_err());
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero_and_loss_nonnegative(
            logits in proptest::collection::vec(-30.0f64..30.0, 5),
            target in 0usize..5,
        ) {
            let (loss, grad) = softmax_cross_entropy(&logits, target).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
