//! Finite-difference verification of analytic layer gradients.

use super::activation::softmax;
use super::error::{NnError, Result};
use super::layer::{backward, forward};
use super::loss::softmax_cross_entropy_batch;
use super::params::{LayerParams, ParameterBundle, GAMMA};
use super::rng::Rng;
use super::spec::{Activation, LayerKind, LayerSpec};
use super::tensor::Tensor;
use super::Mode;

/// Central-difference step.
pub const STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient, so that near-zero gradients do not turn
/// rounding noise into large ratios.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn uses_relu(spec: &LayerSpec) -> bool {
    matches!(
        spec.kind,
        LayerKind::Relu
            | LayerKind::Conv2d {
                activation: Activation::Relu,
                ..
            }
            | LayerKind::Dense {
                activation: Activation::Relu,
                ..
            }
    )
}

/// Compares the analytic backward pass of `spec` against central finite
/// differences of `L = Σ forward(x) ⊙ R` for random `x`, parameters and `R`,
/// over every input element and every trainable parameter. Returns the
/// largest [`relative_error`]. Batchnorm is checked in training mode.
///
/// `sample_shape` excludes the batch axis; every dimension must be ≤ 8.
pub fn gradient_check(spec: &LayerSpec, sample_shape: &[usize], batch: usize, rng: &mut Rng) -> Result<f64> {
    if batch == 0 || batch > 8 || sample_shape.iter().any(|&d| d == 0 || d > 8) {
        return Err(NnError::Parameter(
            "gradient check expects small tensors (every dimension in 1..=8)".into(),
        ));
    }
    let specs = std::slice::from_ref(spec);
    let mut bundle = ParameterBundle::init(specs, sample_shape, rng)?;
    let mut params = bundle.layers.remove(0);
    for p in params.params.iter_mut().filter(|p| p.trainable) {
        let centre = if p.name == GAMMA { 1.0 } else { 0.0 };
        for v in p.value.data_mut() {
            *v = centre + rng.uniform(-1.0, 1.0);
        }
    }

    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let n: usize = shape.iter().product();
    // Keep ReLU inputs away from the kink at zero.
    let away_from_kink = matches!(spec.kind, LayerKind::Relu);
    let data = (0..n)
        .map(|_| {
            if away_from_kink {
                let m = rng.uniform(0.1, 1.0);
                if rng.next_f64() < 0.5 {
                    -m
                } else {
                    m
                }
            } else {
                rng.uniform(-1.0, 1.0)
            }
        })
        .collect();
    let mut input = Tensor::new(shape, data)?;

    let mask_seed = rng.next_u64();
    let probe = forward(spec, &params, &input, Mode::Train, &mut Rng::new(mask_seed), false)?.0;
    let weights: Vec<f64> = (0..probe.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let objective = |params: &LayerParams, x: &Tensor| -> Result<f64> {
        let y = forward(spec, params, x, Mode::Train, &mut Rng::new(mask_seed), false)?.0;
        Ok(y.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let (_, cache) = forward(spec, &params, &input, Mode::Train, &mut Rng::new(mask_seed), true)?;
    let cache = cache.ok_or_else(|| NnError::State("forward kept no cache".into()))?;
    let upstream = Tensor::new(probe.shape().to_vec(), weights.clone())?;
    let (grad_in, grads) = backward(spec, &params, &cache, &upstream, true, false)?;
    let grad_in = grad_in.ok_or_else(|| NnError::State("missing input gradient".into()))?;
    input.set_grad(grad_in.into_data())?;

    let mut worst = 0.0f64;
    let analytic_in = input.grad().expect("set above").to_vec();
    for (i, &a) in analytic_in.iter().enumerate() {
        let mut plus = input.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = input.clone();
        minus.data_mut()[i] -= STEP;
        let num = (objective(&params, &plus)? - objective(&params, &minus)?) / (2.0 * STEP);
        worst = worst.max(relative_error(a, num));
    }

    for (name, g) in &grads {
        let idx = params
            .params
            .iter()
            .position(|p| &p.name == name)
            .ok_or_else(|| NnError::State(format!("gradient for unknown parameter {name}")))?;
        for (j, &a) in g.data().iter().enumerate() {
            let orig = params.params[idx].value.data()[j];
            params.params[idx].value.data_mut()[j] = orig + STEP;
            let up = objective(&params, &input)?;
            params.params[idx].value.data_mut()[j] = orig - STEP;
            let down = objective(&params, &input)?;
            params.params[idx].value.data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * STEP)));
        }
    }

    if uses_relu(spec) && !matches!(spec.kind, LayerKind::Relu) {
        log::debug!("gradient check of {} crosses a fused ReLU; kinks may inflate the error", spec.name);
    }
    Ok(worst)
}

/// Checks the combined softmax + mean cross-entropy gradient
/// `(p - onehot) / batch` against finite differences in the logits.
pub fn gradient_check_softmax_ce(classes: usize, batch: usize, rng: &mut Rng) -> Result<f64> {
    if classes == 0 || classes > 8 || batch == 0 || batch > 8 {
        return Err(NnError::Parameter(
            "gradient check expects small tensors (every dimension in 1..=8)".into(),
        ));
    }
    let logits: Vec<f64> = (0..classes * batch).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let targets: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
    let logits = Tensor::new(vec![batch, classes], logits)?;
    let loss = |t: &Tensor| -> Result<f64> { Ok(softmax_cross_entropy_batch(&softmax(t), &targets)?.0) };

    let (_, grad) = softmax_cross_entropy_batch(&softmax(&logits), &targets)?;
    let mut worst = 0.0f64;
    for (i, &a) in grad.data().iter().enumerate() {
        let mut plus = logits.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = logits.clone();
        minus.data_mut()[i] -= STEP;
        let num = (loss(&plus)? - loss(&minus)?) / (2.0 * STEP);
        worst = worst.max(relative_error(a, num));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Padding;

    #[test]
    fn dense_is_tight() {
        let spec = LayerSpec::new(
            "d",
            LayerKind::Dense {
                units: 4,
                activation: Activation::Linear,
            },
        );
        let err = gradient_check(&spec, &[6], 3, &mut Rng::new(11)).unwrap();
        assert!(err < 1e-6, "dense error {err}");
    }

    #[test]
    fn conv_random_6x6x2_three_filters() {
        let spec = LayerSpec::new(
            "c",
            LayerKind::Conv2d {
                filters: 3,
                kernel: (3, 3),
                padding: Padding::Same,
                stride: (1, 1),
                activation: Activation::Linear,
            },
        );
        let err = gradient_check(&spec, &[6, 6, 2], 2, &mut Rng::new(12)).unwrap();
        assert!(err < 1e-4, "conv error {err}");
    }

    #[test]
    fn relu_away_from_zero() {
        let spec = LayerSpec::new("r", LayerKind::Relu);
        let err = gradient_check(&spec, &[5], 2, &mut Rng::new(13)).unwrap();
        assert!(err < 1e-6, "relu error {err}");
    }

    #[test]
    fn softmax_ce() {
        let err = gradient_check_softmax_ce(5, 3, &mut Rng::new(14)).unwrap();
        assert!(err < 1e-6, "softmax+ce error {err}");
    }

    #[test]
    fn rejects_large_tensors() {
        let spec = LayerSpec::new("r", LayerKind::Relu);
        assert!(gradient_check(&spec, &[9], 1, &mut Rng::new(0)).is_err());
    }
}
