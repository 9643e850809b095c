use super::error::{NnError, Result};
use super::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes the gradient where the forward value was positive; the subgradient
/// at zero is taken as 0. `output` may be either the pre- or post-activation
/// tensor since both are positive at the same positions.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    if grad_out.len() != output.len() {
        return Err(NnError::dim("grad_out", "length differs from activation"));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// Softmax over the last axis, stabilized by subtracting the row maximum.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.shape().last().copied().unwrap_or(1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        softmax_in_place(row);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)` per row.
pub fn softmax_backward(grad_out: &Tensor, probs: &Tensor) -> Result<Tensor> {
    if grad_out.len() != probs.len() {
        return Err(NnError::dim("grad_out", "length differs from probabilities"));
    }
    let k = probs.shape().last().copied().unwrap_or(1);
    let mut out = vec![0.0; probs.len()];
    for ((o, g), p) in out
        .chunks_mut(k)
        .zip(grad_out.data().chunks(k))
        .zip(probs.data().chunks(k))
    {
        let inner: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        for j in 0..k {
            o[j] = p[j] * (g[j] - inner);
        }
    }
    Tensor::new(probs.shape().to_vec(), out)
}
