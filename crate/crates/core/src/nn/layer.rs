//! Forward and backward passes of a single layer over a batch.
//!
//! Tensors here always carry a leading batch axis.

use super::activation::{relu, relu_backward, softmax, softmax_backward};
use super::conv::{conv2d_backward, conv2d_forward};
use super::dense::{dense_backward, dense_forward};
use super::dropout::{dropout, dropout_backward};
use super::error::{NnError, Result};
use super::norm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache};
use super::params::{LayerParams, BETA, BIAS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHTS};
use super::pool::{maxpool2d, maxpool2d_backward};
use super::rng::Rng;
use super::spec::{Activation, LayerKind, LayerSpec};
use super::tensor::Tensor;
use super::Mode;

/// What a training-mode forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Tensor, output: Tensor },
    Dense { input: Tensor, output: Tensor },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    BatchNorm(BatchNormCache),
    BatchNormInfer,
    Dropout(Option<Vec<f64>>),
    Flatten { input_shape: Vec<usize> },
    Relu { output: Tensor },
    Softmax { probs: Tensor },
}

fn activate(z: Tensor, activation: Activation) -> Tensor {
    match activation {
        Activation::Linear => z,
        Activation::Relu => relu(&z),
        Activation::Softmax => softmax(&z),
    }
}

fn activation_backward(
    grad_out: &Tensor,
    output: &Tensor,
    activation: Activation,
    grad_is_preactivation: bool,
) -> Result<Tensor> {
    if grad_is_preactivation {
        return Ok(grad_out.clone());
    }
    match activation {
        Activation::Linear => Ok(grad_out.clone()),
        Activation::Relu => relu_backward(grad_out, output),
        Activation::Softmax => softmax_backward(grad_out, output),
    }
}

/// Runs one layer. With `keep_cache` the returned cache allows a later
/// [`backward`]; batchnorm in training mode always returns its statistics so
/// the caller can update running averages.
pub fn forward(
    spec: &LayerSpec,
    params: &LayerParams,
    input: &Tensor,
    mode: Mode,
    rng: &mut Rng,
    keep_cache: bool,
) -> Result<(Tensor, Option<LayerCache>)> {
    let cache_input = |t: &Tensor| if keep_cache { Some(t.clone()) } else { None };
    Ok(match &spec.kind {
        LayerKind::Conv2d {
            padding, activation, ..
        } => {
            let z = conv2d_forward(input, params.require(WEIGHTS)?, params.require(BIAS)?, *padding)?;
            let y = activate(z, *activation);
            let cache = cache_input(input).map(|input| LayerCache::Conv {
                input,
                output: y.clone(),
            });
            (y, cache)
        }
        LayerKind::Dense { activation, .. } => {
            let z = dense_forward(input, params.require(WEIGHTS)?, params.require(BIAS)?)?;
            let y = activate(z, *activation);
            let cache = cache_input(input).map(|input| LayerCache::Dense {
                input,
                output: y.clone(),
            });
            (y, cache)
        }
        LayerKind::MaxPool2d { window, stride } => {
            let p = maxpool2d(input, *window, *stride)?;
            let cache = keep_cache.then(|| LayerCache::Pool {
                argmax: p.argmax,
                input_shape: input.shape().to_vec(),
            });
            (p.output, cache)
        }
        LayerKind::BatchNorm { epsilon, .. } => {
            let gamma = params.require(GAMMA)?;
            let beta = params.require(BETA)?;
            match mode {
                Mode::Train => {
                    let (y, c) = batchnorm_train(input, gamma, beta, *epsilon)?;
                    (y, Some(LayerCache::BatchNorm(c)))
                }
                Mode::Infer => {
                    let y = batchnorm_infer(
                        input,
                        gamma,
                        beta,
                        params.require(RUNNING_MEAN)?,
                        params.require(RUNNING_VAR)?,
                        *epsilon,
                    )?;
                    (y, keep_cache.then_some(LayerCache::BatchNormInfer))
                }
            }
        }
        LayerKind::Dropout { rate } => {
            let (y, mask) = dropout(input, *rate, mode, rng)?;
            (y, keep_cache.then_some(LayerCache::Dropout(mask)))
        }
        LayerKind::Flatten => {
            let batch = input.shape()[0];
            let y = input.clone().reshape(vec![batch, input.len() / batch])?;
            let cache = keep_cache.then(|| LayerCache::Flatten {
                input_shape: input.shape().to_vec(),
            });
            (y, cache)
        }
        LayerKind::Relu => {
            let y = relu(input);
            let cache = keep_cache.then(|| LayerCache::Relu { output: y.clone() });
            (y, cache)
        }
        LayerKind::Softmax => {
            let y = softmax(input);
            let cache = keep_cache.then(|| LayerCache::Softmax { probs: y.clone() });
            (y, cache)
        }
    })
}

/// Gradient with respect to the layer input (if requested) plus the
/// gradients of its trainable parameters.
///
/// `grad_is_preactivation` marks `grad_out` as already taken with respect to
/// the input of a fused activation, as when softmax and cross-entropy are
/// differentiated together.
pub fn backward(
    spec: &LayerSpec,
    params: &LayerParams,
    cache: &LayerCache,
    grad_out: &Tensor,
    need_input_grad: bool,
    grad_is_preactivation: bool,
) -> Result<(Option<Tensor>, Vec<(String, Tensor)>)> {
    let mismatch = || NnError::State(format!("cache does not belong to layer {}", spec.name));
    match (&spec.kind, cache) {
        (LayerKind::Conv2d { padding, activation, .. }, LayerCache::Conv { input, output }) => {
            let gz = activation_backward(grad_out, output, *activation, grad_is_preactivation)?;
            let g = conv2d_backward(&gz, input, params.require(WEIGHTS)?, *padding, need_input_grad)?;
            Ok((g.input, vec![(WEIGHTS.into(), g.weights), (BIAS.into(), g.bias)]))
        }
        (LayerKind::Dense { activation, .. }, LayerCache::Dense { input, output }) => {
            let gz = activation_backward(grad_out, output, *activation, grad_is_preactivation)?;
            let (gx, gw, gb) = dense_backward(&gz, input, params.require(WEIGHTS)?)?;
            Ok((Some(gx), vec![(WEIGHTS.into(), gw), (BIAS.into(), gb)]))
        }
        (LayerKind::MaxPool2d { .. }, LayerCache::Pool { argmax, input_shape }) => {
            Ok((Some(maxpool2d_backward(grad_out, argmax, input_shape)?), Vec::new()))
        }
        (LayerKind::BatchNorm { .. }, LayerCache::BatchNorm(c)) => {
            let (gx, gg, gb) = batchnorm_backward(grad_out, params.require(GAMMA)?, c)?;
            Ok((Some(gx), vec![(GAMMA.into(), gg), (BETA.into(), gb)]))
        }
        (LayerKind::BatchNorm { .. }, LayerCache::BatchNormInfer) => Err(NnError::State(format!(
            "layer {} ran in inference mode and cannot be differentiated",
            spec.name
        ))),
        (LayerKind::Dropout { .. }, LayerCache::Dropout(mask)) => {
            Ok((Some(dropout_backward(grad_out, mask.as_deref())?), Vec::new()))
        }
        (LayerKind::Flatten, LayerCache::Flatten { input_shape }) => {
            Ok((Some(grad_out.clone().reshape(input_shape.clone())?), Vec::new()))
        }
        (LayerKind::Relu, LayerCache::Relu { output }) => {
            let g = if grad_is_preactivation {
                grad_out.clone()
            } else {
                relu_backward(grad_out, output)?
            };
            Ok((Some(g), Vec::new()))
        }
        (LayerKind::Softmax, LayerCache::Softmax { probs }) => {
            let g = if grad_is_preactivation {
                grad_out.clone()
            } else {
                softmax_backward(grad_out, probs)?
            };
            Ok((Some(g), Vec::new()))
        }
        _ => Err(mismatch()),
    }
}
