use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

/// `−log p[label]` with the probability floored at [`LOG_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::contract(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(LOG_FLOOR).ln())
}

/// Mean of [`cross_entropy`] over a batch.
pub fn batch_cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::contract("batch loss needs one label per prediction"));
    }
    let mut s = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        s += cross_entropy(p, y)?;
    }
    Ok(s / probs.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the softmax logits.
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::contract(format!("label {label} out of range for {} classes", probs.len())));
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_correct_prediction() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_over_74() {
        let p = vec![1.0 / 74.0; 74];
        assert!((cross_entropy(&p, 17).unwrap() - 74f64.ln()).abs() < 1e-12);
        assert!((74f64.ln() - 4.3041).abs() < 1e-4);
    }

    #[test]
    fn floor_keeps_loss_finite() {
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn bad_label() {
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!(cross_entropy_grad(&[0.5, 0.5], 5).is_err());
    }
}
