//! Losses over batches of outputs `[batch, n_out]`. Each returns the mean
//! loss and its gradient with respect to the outputs (post-activation).

use ndarray::{Array2, ArrayView2};

use super::ModelError;

pub const PROB_CLAMP: f64 = 1e-12;

fn check_len(a: usize, b: usize) -> Result<(), ModelError> {
    if a != b {
        return Err(ModelError::ShapeMismatch(format!("lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Mean of squared componentwise differences.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64, ModelError> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Categorical cross-entropy `-ln(max(p[target], 1e-12))`.
pub fn loss_cross_entropy(probs: &[f64], target: usize) -> Result<f64, ModelError> {
    let p = probs.get(target).ok_or(ModelError::IndexOutOfRange {
        index: target,
        n_classes: probs.len(),
    })?;
    Ok(-p.max(PROB_CLAMP).ln())
}

/// Per-class binary cross-entropy averaged over classes.
pub fn loss_binary_cross_entropy(probs: &[f64], target: usize) -> Result<f64, ModelError> {
    if target >= probs.len() {
        return Err(ModelError::IndexOutOfRange {
            index: target,
            n_classes: probs.len(),
        });
    }
    let sum: f64 = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if c == target {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

pub fn mse_batch(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>), ModelError> {
    if pred.dim() != target.dim() {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

pub fn cross_entropy_batch(
    probs: ArrayView2<'_, f64>,
    targets: &[usize],
    binary: bool,
) -> Result<(f64, Array2<f64>), ModelError> {
    let (batch, n_classes) = probs.dim();
    check_len(batch, targets.len())?;
    let mut grad = Array2::zeros((batch, n_classes));
    let mut total = 0.0;
    for (b, &target) in targets.iter().enumerate() {
        let row = probs.row(b);
        let row = row.as_slice().expect("contiguous probabilities");
        if binary {
            total += loss_binary_cross_entropy(row, target)?;
            for (c, &p) in row.iter().enumerate() {
                let inside = p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
                if inside {
                    let d = if c == target { -1.0 / p } else { 1.0 / (1.0 - p) };
                    grad[[b, c]] = d / (n_classes * batch) as f64;
                }
            }
        } else {
            total += loss_cross_entropy(row, target)?;
            let p = row[target];
            if p > PROB_CLAMP {
                grad[[b, target]] = -1.0 / (p * batch as f64);
            }
        }
    }
    Ok((total / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(loss_mse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            loss_mse(&[1.0], &[0.0, 1.0]),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(loss_cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let u = loss_cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        assert!((u - 1.3863).abs() < 1e-4);
        let clamped = loss_cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((clamped - 27.631).abs() < 1e-3);
        assert!(matches!(
            loss_cross_entropy(&[0.5, 0.5], 2),
            Err(ModelError::IndexOutOfRange { index: 2, n_classes: 2 })
        ));
    }

    #[test]
    fn batch_gradient_scales_with_loss() {
        let p = Array2::from_shape_vec((2, 2), vec![0.2, 0.9, 0.4, 0.1]).unwrap();
        let t = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (l, g) = mse_batch(p.view(), t.view()).unwrap();
        assert!((l - (0.04 + 0.01 + 0.36 + 0.01) / 4.0).abs() < 1e-15);
        assert!((g[[1, 0]] - 2.0 * -0.6 / 4.0).abs() < 1e-15);
    }
}
