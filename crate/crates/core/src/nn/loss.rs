use super::error::{NnError, Result};
use super::tensor::Tensor;

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(p[target])` with `p` clamped to `[1e-12, 1]`.
pub fn cross_entropy(probs: &Tensor, target: usize) -> Result<f64> {
    let k = probs.len();
    if target >= k {
        return Err(NnError::Parameter(format!("target {target} out of range for {k} classes")));
    }
    Ok(-probs.data()[target].clamp(PROB_FLOOR, 1.0).ln())
}

/// Mean cross-entropy over a `[batch, k]` probability tensor, together with
/// the gradient of that mean with respect to the pre-softmax logits,
/// `(p - onehot) / batch`.
pub fn softmax_cross_entropy_batch(probs: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let k = probs.shape().last().copied().unwrap_or(0);
    let batch = probs.len() / k.max(1);
    if batch != targets.len() {
        return Err(NnError::dim(
            "batch",
            format!("{batch} rows of probabilities, {} targets", targets.len()),
        ));
    }
    let mut grad = probs.data().to_vec();
    let mut total = 0.0;
    for (row, &t) in grad.chunks_mut(k).zip(targets) {
        if t >= k {
            return Err(NnError::Parameter(format!("target {t} out of range for {k} classes")));
        }
        total += -row[t].clamp(PROB_FLOOR, 1.0).ln();
        row[t] -= 1.0;
        for g in row.iter_mut() {
            *g /= batch as f64;
        }
    }
    Ok((total / batch as f64, Tensor::new(probs.shape().to_vec(), grad)?))
}
