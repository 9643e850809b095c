use rayon::prelude::*;

use super::error::{NnError, Result};
use super::tensor::Tensor;

/// Output of a max-pool forward pass together with the routing needed for
/// its backward pass.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    /// Flat input index (within the whole batch) of each output's maximum.
    pub argmax: Vec<usize>,
}

fn dims(input: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match input.shape() {
        [b, h, w, c] => Ok((*b, *h, *w, *c)),
        [h, w, c] => Ok((1, *h, *w, *c)),
        other => Err(NnError::dim(
            "rank",
            format!("maxpool input must be [batch,] height x width x channels, got {other:?}"),
        )),
    }
}

/// Max pooling with floor semantics; a trailing partial window is dropped.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2d(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<MaxPoolOutput> {
    let (batch, h, w, c) = dims(input)?;
    if window.0 > h {
        return Err(NnError::dim("height", format!("window {} larger than input {h}", window.0)));
    }
    if window.1 > w {
        return Err(NnError::dim("width", format!("window {} larger than input {w}", window.1)));
    }
    if stride.0 == 0 || stride.1 == 0 || window.0 == 0 || window.1 == 0 {
        return Err(NnError::Parameter("maxpool window and stride must be positive".into()));
    }
    let oh = (h - window.0) / stride.0 + 1;
    let ow = (w - window.1) / stride.1 + 1;
    let in_len = h * w * c;
    let out_len = oh * ow * c;
    let x = input.data();

    let mut out = vec![0.0; batch * out_len];
    let mut arg = vec![0usize; batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(arg.par_chunks_mut(out_len))
        .enumerate()
        .for_each(|(b, (out, arg))| {
            let base = b * in_len;
            let xb = &x[base..][..in_len];
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_i = ((oy * stride.0) * w + ox * stride.1) * c + ch;
                        let mut best = xb[best_i];
                        for ky in 0..window.0 {
                            for kx in 0..window.1 {
                                let i = ((oy * stride.0 + ky) * w + ox * stride.1 + kx) * c + ch;
                                if xb[i] > best {
                                    best = xb[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = (oy * ow + ox) * c + ch;
                        out[o] = best;
                        arg[o] = base + best_i;
                    }
                }
            }
        });

    let shape = if input.rank() == 3 {
        vec![oh, ow, c]
    } else {
        vec![batch, oh, ow, c]
    };
    Ok(MaxPoolOutput {
        output: Tensor::new(shape, out)?,
        argmax: arg,
    })
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::dim(
            "grad_out",
            format!("expected {} elements, got {}", argmax.len(), grad_out.len()),
        ));
    }
    let mut gi = Tensor::zeros(input_shape.to_vec());
    let data = gi.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        data[i] += g;
    }
    Ok(gi)
}
