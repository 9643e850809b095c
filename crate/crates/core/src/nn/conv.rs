//! 2-D convolution over `[batch, height, width, channels]` tensors.
//!
//! The kernel is applied as a cross-correlation (no flip), with weights laid
//! out `[kh, kw, c_in, c_out]` so the innermost loop runs over contiguous
//! output channels.

use rayon::prelude::*;

use super::error::{NnError, Result};
use super::spec::Padding;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn input_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn output_len(&self) -> usize {
        self.oh * self.ow * self.cout
    }

    /// Input row/column for an output position and kernel offset, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let i = o + k;
        if i < pad || i - pad >= limit {
            None
        } else {
            Some(i - pad)
        }
    }
}

fn geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, padding: Padding) -> Result<Geometry> {
    let (batch, h, w, cin) = match input.shape() {
        [b, h, w, c] => (*b, *h, *w, *c),
        [h, w, c] => (1, *h, *w, *c),
        other => {
            return Err(NnError::dim(
                "rank",
                format!("conv2d input must be [batch,] height x width x channels, got {other:?}"),
            ))
        }
    };
    let (kh, kw, wcin, cout) = match weights.shape() {
        [kh, kw, ci, co] => (*kh, *kw, *ci, *co),
        other => {
            return Err(NnError::dim(
                "weights",
                format!("expected [kh, kw, c_in, c_out], got {other:?}"),
            ))
        }
    };
    if wcin != cin {
        return Err(NnError::dim(
            "channels",
            format!("weights expect {wcin} input channels, input has {cin}"),
        ));
    }
    if bias.len() != cout {
        return Err(NnError::dim(
            "bias",
            format!("expected {cout} biases, got {}", bias.len()),
        ));
    }
    let (pad_h, pad_w) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(NnError::Parameter("same padding needs odd kernel sizes".into()));
            }
            (kh / 2, kw / 2)
        }
    };
    if h + 2 * pad_h < kh {
        return Err(NnError::dim("height", format!("kernel {kh} does not fit input {h}")));
    }
    if w + 2 * pad_w < kw {
        return Err(NnError::dim("width", format!("kernel {kw} does not fit input {w}")));
    }
    Ok(Geometry {
        batch,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        pad_h,
        pad_w,
        oh: h + 2 * pad_h - kh + 1,
        ow: w + 2 * pad_w - kw + 1,
    })
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    let g = geometry(input, weights, bias, padding)?;
    let x = input.data();
    let wt = weights.data();
    let b = bias.data();
    let mut out = vec![0.0; g.batch * g.output_len()];

    out.par_chunks_mut(g.output_len())
        .zip(x.par_chunks(g.input_len()))
        .for_each(|(out, x)| {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
                    o.copy_from_slice(b);
                    for ky in 0..g.kh {
                        let Some(iy) = g.source(oy, ky, g.pad_h, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = g.source(ox, kx, g.pad_w, g.w) else {
                                continue;
                            };
                            let px = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                            let taps = &wt[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                            for (ci, &v) in px.iter().enumerate() {
                                if v == 0.0 {
                                    continue;
                                }
                                let row = &taps[ci * g.cout..][..g.cout];
                                for (acc, &wv) in o.iter_mut().zip(row) {
                                    *acc += v * wv;
                                }
                            }
                        }
                    }
                }
            }
        });

    let shape = if input.rank() == 3 {
        vec![g.oh, g.ow, g.cout]
    } else {
        vec![g.batch, g.oh, g.ow, g.cout]
    };
    Tensor::new(shape, out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    padding: Padding,
    need_input_grad: bool,
) -> Result<Conv2dGrads> {
    let cout = weights.shape().last().copied().unwrap_or(0);
    let bias_shape = Tensor::zeros(vec![cout.max(1)]);
    let g = geometry(input, weights, &bias_shape, padding)?;
    if grad_out.len() != g.batch * g.output_len() {
        return Err(NnError::dim(
            "grad_out",
            format!(
                "expected {} elements for output {}x{}x{}, got {}",
                g.batch * g.output_len(),
                g.oh,
                g.ow,
                g.cout,
                grad_out.len()
            ),
        ));
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();

    let grad_input = if need_input_grad {
        let mut gi = vec![0.0; x.len()];
        gi.par_chunks_mut(g.input_len())
            .zip(go.par_chunks(g.output_len()))
            .for_each(|(gi, go)| {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let gpix = &go[(oy * g.ow + ox) * g.cout..][..g.cout];
                        if gpix.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        for ky in 0..g.kh {
                            let Some(iy) = g.source(oy, ky, g.pad_h, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.source(ox, kx, g.pad_w, g.w) else {
                                    continue;
                                };
                                let taps = &wt[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                                let dst = &mut gi[(iy * g.w + ix) * g.cin..][..g.cin];
                                for (ci, d) in dst.iter_mut().enumerate() {
                                    let row = &taps[ci * g.cout..][..g.cout];
                                    *d += dot(row, gpix);
                                }
                            }
                        }
                    }
                }
            });
        Some(Tensor::new(input.shape().to_vec(), gi)?)
    } else {
        None
    };

    // One row per (ky, kx, ci); each row sums over batch and positions in a
    // fixed order so the result does not depend on the thread count.
    let mut gw = vec![0.0; wt.len()];
    gw.par_chunks_mut(g.cout).enumerate().for_each(|(r, row)| {
        let ci = r % g.cin;
        let kx = (r / g.cin) % g.kw;
        let ky = r / (g.cin * g.kw);
        for b in 0..g.batch {
            let xb = &x[b * g.input_len()..][..g.input_len()];
            let gob = &go[b * g.output_len()..][..g.output_len()];
            for oy in 0..g.oh {
                let Some(iy) = g.source(oy, ky, g.pad_h, g.h) else {
                    continue;
                };
                for ox in 0..g.ow {
                    let Some(ix) = g.source(ox, kx, g.pad_w, g.w) else {
                        continue;
                    };
                    let v = xb[(iy * g.w + ix) * g.cin + ci];
                    if v == 0.0 {
                        continue;
                    }
                    let gpix = &gob[(oy * g.ow + ox) * g.cout..][..g.cout];
                    for (acc, &gv) in row.iter_mut().zip(gpix) {
                        *acc += v * gv;
                    }
                }
            }
        }
    });

    let mut gb = vec![0.0; g.cout];
    for gpix in go.chunks(g.cout) {
        for (acc, &v) in gb.iter_mut().zip(gpix) {
            *acc += v;
        }
    }

    Ok(Conv2dGrads {
        input: grad_input,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
