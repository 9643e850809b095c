use super::error::{NnError, Result};
use super::rng::Rng;
use super::spec::{LayerKind, LayerSpec, ParamCount};
use super::tensor::Tensor;

pub const WEIGHTS: &str = "weights";
pub const BIAS: &str = "bias";
pub const GAMMA: &str = "gamma";
pub const BETA: &str = "beta";
pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Parameters owned by one layer, in a fixed per-kind order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub layer: String,
    pub params: Vec<Param>,
}

impl LayerParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| NnError::State(format!("layer {} has no parameter {name}", self.layer)))
    }
}

/// All parameters of a sequential network, one entry per layer (empty for
/// parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    pub layers: Vec<LayerParams>,
}

impl ParameterBundle {
    /// Initializes parameters for `specs` on a per-sample `input` shape.
    ///
    /// Conv and dense weights are He-uniform (`±sqrt(6 / fan_in)`) with zero
    /// bias; batchnorm starts at gamma 1, beta 0, mean 0, variance 1. Layers
    /// draw from `rng` in order, weights row-major.
    pub fn init(specs: &[LayerSpec], input: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut shape = input.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let out = spec.output_shape(&shape).map_err(|e| e.in_layer(&spec.name))?;
            let params = match &spec.kind {
                LayerKind::Conv2d { filters, kernel, .. } => {
                    let fan_in = kernel.0 * kernel.1 * shape[2];
                    let w = he_uniform(vec![kernel.0, kernel.1, shape[2], *filters], fan_in, rng);
                    vec![
                        param(WEIGHTS, w, true),
                        param(BIAS, Tensor::zeros(vec![*filters]), true),
                    ]
                }
                LayerKind::Dense { units, .. } => {
                    let w = he_uniform(vec![shape[0], *units], shape[0], rng);
                    vec![
                        param(WEIGHTS, w, true),
                        param(BIAS, Tensor::zeros(vec![*units]), true),
                    ]
                }
                LayerKind::BatchNorm { .. } => {
                    let c = *shape.last().expect("validated rank");
                    vec![
                        param(GAMMA, Tensor::filled(vec![c], 1.0), true),
                        param(BETA, Tensor::zeros(vec![c]), true),
                        param(RUNNING_MEAN, Tensor::zeros(vec![c]), false),
                        param(RUNNING_VAR, Tensor::filled(vec![c], 1.0), false),
                    ]
                }
                _ => Vec::new(),
            };
            layers.push(LayerParams {
                layer: spec.name.clone(),
                params,
            });
            shape = out;
        }
        Ok(Self { layers })
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams> {
        self.layers.iter().find(|l| l.layer == name)
    }

    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for p in self.layers.iter().flat_map(|l| &l.params) {
            if p.trainable {
                c.trainable += p.value.len();
            } else {
                c.non_trainable += p.value.len();
            }
        }
        c
    }

    /// CRC-32 over every parameter value, for cheap change detection.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for p in self.layers.iter().flat_map(|l| &l.params) {
            for v in p.value.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }
}

fn param(name: &str, value: Tensor, trainable: bool) -> Param {
    Param {
        name: name.to_string(),
        value,
        trainable,
    }
}

fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
    Tensor::new(shape, data).expect("shape from spec")
}

/// Gradients for the trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub layer: String,
    pub grads: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

/// Plain SGD, `w <- w - lr * g`, applied to every trainable parameter that
/// has a gradient. Nothing is updated if any gradient is non-finite.
pub fn sgd_step(params: &mut ParameterBundle, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(NnError::Parameter(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    for lg in &grads.layers {
        let lp = params
            .layer(&lg.layer)
            .ok_or_else(|| NnError::State(format!("gradient for unknown layer {}", lg.layer)))?;
        for (name, g) in &lg.grads {
            let p = lp.params.iter().find(|p| &p.name == name).ok_or_else(|| {
                NnError::State(format!("gradient for unknown parameter {}.{name}", lg.layer))
            })?;
            if !p.trainable {
                return Err(NnError::State(format!(
                    "gradient supplied for non-trainable {}.{name}",
                    lg.layer
                )));
            }
            if p.value.shape() != g.shape() {
                return Err(NnError::dim(
                    format!("{}.{name}", lg.layer),
                    format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.value.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite {
                    layer: lg.layer.clone(),
                    param: name.clone(),
                });
            }
        }
    }
    for lg in &grads.layers {
        let lp = params
            .layers
            .iter_mut()
            .find(|l| l.layer == lg.layer)
            .expect("checked above");
        for (name, g) in &lg.grads {
            let value = lp.get_mut(name).expect("checked above");
            for (w, &gv) in value.data_mut().iter_mut().zip(g.data()) {
                *w -= learning_rate * gv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Padding;

    fn bundle() -> ParameterBundle {
        let specs = vec![
            LayerSpec::new(
                "conv",
                LayerKind::Conv2d {
                    filters: 2,
                    kernel: (3, 3),
                    padding: Padding::Same,
                    stride: (1, 1),
                    activation: crate::nn::Activation::Relu,
                },
            ),
            LayerSpec::new(
                "bn",
                LayerKind::BatchNorm {
                    epsilon: 1e-5,
                    momentum: 0.9,
                },
            ),
        ];
        ParameterBundle::init(&specs, &[4, 4, 1], &mut Rng::new(5)).unwrap()
    }

    fn single(layer: &str, name: &str, g: Tensor) -> Gradients {
        Gradients {
            layers: vec![LayerGrads {
                layer: layer.into(),
                grads: vec![(name.into(), g)],
            }],
        }
    }

    #[test]
    fn update_rule() {
        let mut p = ParameterBundle {
            layers: vec![LayerParams {
                layer: "d".into(),
                params: vec![param(BIAS, Tensor::from_vec(vec![1.0]), true)],
            }],
        };
        sgd_step(&mut p, &single("d", BIAS, Tensor::from_vec(vec![1.0])), 0.1).unwrap();
        assert!((p.layers[0].params[0].value.data()[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut p, &single("d", BIAS, Tensor::from_vec(vec![0.0])), 0.1).unwrap();
        assert!((p.layers[0].params[0].value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn running_stats_are_not_trainable() {
        let mut p = bundle();
        let before = p.clone();
        let err = sgd_step(&mut p, &single("bn", RUNNING_MEAN, Tensor::zeros(vec![2])), 0.1);
        assert!(err.is_err());
        assert_eq!(p, before);
        let count = p.count();
        assert_eq!(count.non_trainable, 4);
    }

    #[test]
    fn non_finite_names_layer() {
        let mut p = bundle();
        let before = p.clone();
        let mut g = Tensor::zeros(vec![2]);
        g.data_mut()[1] = f64::NAN;
        match sgd_step(&mut p, &single("conv", BIAS, g), 0.1) {
            Err(NnError::NonFinite { layer, param }) => {
                assert_eq!(layer, "conv");
                assert_eq!(param, BIAS);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
    }

    #[test]
    fn he_uniform_bounds() {
        let p = bundle();
        let w = p.layers[0].get(WEIGHTS).unwrap();
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert_eq!(p.layers[1].get(RUNNING_VAR).unwrap().data(), &[1.0, 1.0]);
    }
}
