use super::Linear;
use crate::error::{Error, Result};

/// Lower bound on the probability inside the log of the cross-entropy.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Linear layer followed by softmax.
pub fn fc_softmax(fc: &Linear, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != fc.input_size() {
        return Err(Error::DimensionMismatch {
            expected: fc.input_size(),
            found: h.len(),
        });
    }
    Ok(softmax(&fc.forward(h)))
}

/// `-ln p[label]` with 1-based `label`, floored at [`LOSS_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label == 0 || label > probs.len() {
        return Err(Error::InvalidParameter(format!(
            "label {label} outside 1..={}",
            probs.len()
        )));
    }
    Ok(-probs[label - 1].max(LOSS_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), label)` with respect to `z`.
pub fn softmax_cross_entropy_backward(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label - 1] -= 1.0;
    g
}
