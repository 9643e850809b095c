use rayon::prelude::*;

use super::conv::dot;
use super::error::{NnError, Result};
use super::tensor::Tensor;

fn dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let (batch, n) = match input.shape() {
        [n] => (1, *n),
        [b, n] => (*b, *n),
        other => {
            return Err(NnError::dim(
                "rank",
                format!("dense input must be [batch,] features, got {other:?}"),
            ))
        }
    };
    let (rows, m) = match weights.shape() {
        [r, m] => (*r, *m),
        other => return Err(NnError::dim("weights", format!("expected [n, m], got {other:?}"))),
    };
    if rows != n {
        return Err(NnError::dim(
            "features",
            format!("weights have {rows} rows, input has {n} features"),
        ));
    }
    Ok((batch, n, m))
}

/// `y = Wᵀx + b` with `W` stored `[n_in, n_out]`, i.e. `y[j] = Σᵢ x[i]·W[i][j] + b[j]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, n, m) = dims(input, weights)?;
    if bias.len() != m {
        return Err(NnError::dim("bias", format!("expected {m} biases, got {}", bias.len())));
    }
    let w = weights.data();
    let mut out = vec![0.0; batch * m];
    out.par_chunks_mut(m)
        .zip(input.data().par_chunks(n))
        .for_each(|(y, x)| {
            y.copy_from_slice(bias.data());
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (acc, &wv) in y.iter_mut().zip(&w[i * m..][..m]) {
                    *acc += xi * wv;
                }
            }
        });
    let shape = if input.rank() == 1 { vec![m] } else { vec![batch, m] };
    Tensor::new(shape, out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, n, m) = dims(input, weights)?;
    if grad_out.len() != batch * m {
        return Err(NnError::dim(
            "grad_out",
            format!("expected {} elements, got {}", batch * m, grad_out.len()),
        ));
    }
    let x = input.data();
    let go = grad_out.data();
    let w = weights.data();

    let mut gw = vec![0.0; n * m];
    gw.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for b in 0..batch {
            let xi = x[b * n + i];
            if xi == 0.0 {
                continue;
            }
            for (acc, &g) in row.iter_mut().zip(&go[b * m..][..m]) {
                *acc += xi * g;
            }
        }
    });

    let mut gb = vec![0.0; m];
    for g in go.chunks(m) {
        for (acc, &v) in gb.iter_mut().zip(g) {
            *acc += v;
        }
    }

    let mut gx = vec![0.0; batch * n];
    gx.par_chunks_mut(n)
        .zip(go.par_chunks(m))
        .for_each(|(gxb, gob)| {
            for (i, d) in gxb.iter_mut().enumerate() {
                *d = dot(&w[i * m..][..m], gob);
            }
        });

    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(vec![n, m], gw)?,
        Tensor::new(vec![m], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let y = dense_forward(&Tensor::from_vec(vec![1.0, 1.0]), &w, &Tensor::zeros(vec![2])).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_weights() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(vec![3, 3], eye).unwrap();
        let x = Tensor::from_vec(vec![0.5, -2.0, 9.0]);
        let y = dense_forward(&x, &w, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn length_mismatch() {
        let w = Tensor::zeros(vec![3, 2]);
        assert!(matches!(
            dense_forward(&Tensor::zeros(vec![2]), &w, &Tensor::zeros(vec![2])),
            Err(NnError::Dimension { .. })
        ));
    }

    #[test]
    fn backward_by_hand() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap();
        let go = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let (gx, gw, gb) = dense_backward(&go, &x, &w).unwrap();
        assert_eq!(gx.data(), &[7.0, 10.0]);
        assert_eq!(gw.data(), &[0.5, 1.0, -1.0, -2.0]);
        assert_eq!(gb.data(), &[1.0, 2.0]);
    }
}
