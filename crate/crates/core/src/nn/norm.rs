//! Per-channel batch normalization over the last axis.

use super::error::{NnError, Result};
use super::tensor::Tensor;

/// Values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

fn check(input: &Tensor, c: usize, named: &[(&str, &Tensor)]) -> Result<()> {
    let last = input.shape().last().copied().unwrap_or(0);
    if last != c {
        return Err(NnError::dim(
            "channels",
            format!("input has {last} channels, parameters have {c}"),
        ));
    }
    for (name, t) in named {
        if t.len() != c {
            return Err(NnError::dim(
                *name,
                format!("expected {c} values, got {}", t.len()),
            ));
        }
    }
    Ok(())
}

/// Normalizes with statistics of the batch itself. Does not touch running
/// statistics; see [`update_running_stats`].
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let c = gamma.len();
    check(input, c, &[("beta", beta)])?;
    let x = input.data();
    let n = (x.len() / c) as f64;

    let mut mean = vec![0.0; c];
    for px in x.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for px in x.chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let (g, b) = (gamma.data(), beta.data());
    for ((px, nx), ox) in x.chunks(c).zip(normalized.chunks_mut(c)).zip(out.chunks_mut(c)) {
        for ch in 0..c {
            nx[ch] = (px[ch] - mean[ch]) * inv_std[ch];
            ox[ch] = g[ch] * nx[ch] + b[ch];
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache {
            normalized,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalizes with stored running statistics. Pure.
pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    let c = gamma.len();
    check(
        input,
        c,
        &[("beta", beta), ("running_mean", running_mean), ("running_var", running_var)],
    )?;
    let scale: Vec<f64> = running_var
        .data()
        .iter()
        .zip(gamma.data())
        .map(|(v, g)| g / (v + epsilon).sqrt())
        .collect();
    let mut out = input.data().to_vec();
    for px in out.chunks_mut(c) {
        for ch in 0..c {
            px[ch] = (px[ch] - running_mean.data()[ch]) * scale[ch] + beta.data()[ch];
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// `running <- momentum * running + (1 - momentum) * batch`.
pub fn update_running_stats(
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    cache: &BatchNormCache,
    momentum: f64,
) {
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&cache.mean) {
        *r = momentum * *r + (1.0 - momentum) * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&cache.var) {
        *r = momentum * *r + (1.0 - momentum) * v;
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    gamma: &Tensor,
    cache: &BatchNormCache,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = gamma.len();
    if grad_out.len() != cache.normalized.len() {
        return Err(NnError::dim(
            "grad_out",
            format!("expected {} elements, got {}", cache.normalized.len(), grad_out.len()),
        ));
    }
    let go = grad_out.data();
    let n = (go.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (gpx, npx) in go.chunks(c).zip(cache.normalized.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += gpx[ch] * npx[ch];
            dbeta[ch] += gpx[ch];
        }
    }
    // dx = gamma * inv_std / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))
    let mut dx = vec![0.0; go.len()];
    let g = gamma.data();
    for ((dpx, gpx), npx) in dx.chunks_mut(c).zip(go.chunks(c)).zip(cache.normalized.chunks(c)) {
        for ch in 0..c {
            dpx[ch] = g[ch] * cache.inv_std[ch] / n
                * (n * gpx[ch] - dbeta[ch] - npx[ch] * dgamma[ch]);
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizes_each_channel() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 * 0.3 + (i % 3) as f64).collect();
        let x = Tensor::new(vec![2, 5, 2, 3], x).unwrap();
        let (y, _) = batchnorm_train(&x, &Tensor::filled(vec![3], 1.0), &Tensor::zeros(vec![3]), 1e-5).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(3).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            // epsilon pulls the variance slightly below one.
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::filled(vec![4, 4, 1], 7.0);
        let (y, _) = batchnorm_train(&x, &Tensor::filled(vec![1], 1.0), &Tensor::zeros(vec![1]), 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12 && v.is_finite()));
    }

    #[test]
    fn infer_uses_running_stats() {
        let x = Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap();
        let y = batchnorm_infer(
            &x,
            &Tensor::from_vec(vec![2.0, 1.0]),
            &Tensor::from_vec(vec![0.5, 0.0]),
            &Tensor::from_vec(vec![1.0, -1.0]),
            &Tensor::from_vec(vec![4.0, 1.0]),
            0.0,
        )
        .unwrap();
        assert_eq!(y.data(), &[2.5, 0.0]);
    }

    #[test]
    fn running_update_is_ema() {
        let mut m = Tensor::from_vec(vec![0.0]);
        let mut v = Tensor::from_vec(vec![1.0]);
        let cache = BatchNormCache {
            normalized: vec![],
            inv_std: vec![],
            mean: vec![10.0],
            var: vec![3.0],
        };
        update_running_stats(&mut m, &mut v, &cache, 0.9);
        assert!((m.data()[0] - 1.0).abs() < 1e-12);
        assert!((v.data()[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            batchnorm_train(&x, &Tensor::zeros(vec![2]), &Tensor::zeros(vec![2]), 1e-5),
            Err(NnError::Dimension { .. })
        ));
    }
}
