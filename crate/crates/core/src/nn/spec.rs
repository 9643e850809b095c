use std::fmt;

use super::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero padding that preserves the spatial size (odd kernels only).
    Same,
}

/// Activation fused onto the output of a conv or dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
        stride: (usize, usize),
        activation: Activation,
    },
    MaxPool2d {
        window: (usize, usize),
        stride: (usize, usize),
    },
    BatchNorm {
        epsilon: f64,
        momentum: f64,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Relu,
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
        }
    }
}

/// Parameter counts of a layer or a whole network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, rhs: ParamCount) -> ParamCount {
        ParamCount {
            trainable: self.trainable + rhs.trainable,
            non_trainable: self.non_trainable + rhs.non_trainable,
        }
    }
}

/// A named layer in a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LayerKind::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } => {
                if *filters == 0 {
                    return Err(NnError::Parameter("conv2d needs at least one filter".into()));
                }
                if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(NnError::Parameter(format!(
                        "conv2d kernel must have odd dimensions, got {}x{}",
                        kernel.0, kernel.1
                    )));
                }
                if *stride != (1, 1) {
                    return Err(NnError::Parameter("conv2d supports stride 1x1 only".into()));
                }
            }
            LayerKind::MaxPool2d { window, stride } => {
                if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(NnError::Parameter("maxpool window and stride must be positive".into()));
                }
            }
            LayerKind::BatchNorm { epsilon, momentum } => {
                if !(*epsilon > 0.0) {
                    return Err(NnError::Parameter("batchnorm epsilon must be positive".into()));
                }
                if !(0.0..=1.0).contains(momentum) {
                    return Err(NnError::Parameter("batchnorm momentum must be in [0, 1]".into()));
                }
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(NnError::Parameter(format!("dropout rate {rate} not in [0, 1)")));
                }
            }
            LayerKind::Dense { units, .. } => {
                if *units == 0 {
                    return Err(NnError::Parameter("dense needs at least one unit".into()));
                }
            }
            LayerKind::Flatten | LayerKind::Relu | LayerKind::Softmax => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match &self.kind {
            LayerKind::Conv2d {
                filters,
                kernel,
                padding,
                ..
            } => {
                let [h, w, _c] = spatial(input)?;
                match padding {
                    Padding::Same => Ok(vec![h, w, *filters]),
                    Padding::Valid => {
                        if kernel.0 > h {
                            return Err(NnError::dim(
                                "height",
                                format!("kernel {} larger than input {h}", kernel.0),
                            ));
                        }
                        if kernel.1 > w {
                            return Err(NnError::dim(
                                "width",
                                format!("kernel {} larger than input {w}", kernel.1),
                            ));
                        }
                        Ok(vec![h - kernel.0 + 1, w - kernel.1 + 1, *filters])
                    }
                }
            }
            LayerKind::MaxPool2d { window, stride } => {
                let [h, w, c] = spatial(input)?;
                if window.0 > h {
                    return Err(NnError::dim("height", format!("window {} larger than input {h}", window.0)));
                }
                if window.1 > w {
                    return Err(NnError::dim("width", format!("window {} larger than input {w}", window.1)));
                }
                Ok(vec![(h - window.0) / stride.0 + 1, (w - window.1) / stride.1 + 1, c])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense { units, .. } => {
                if input.len() != 1 {
                    return Err(NnError::dim(
                        "rank",
                        format!("dense expects a flat input, got {input:?}"),
                    ));
                }
                Ok(vec![*units])
            }
            LayerKind::BatchNorm { .. }
            | LayerKind::Dropout { .. }
            | LayerKind::Relu
            | LayerKind::Softmax => {
                if input.is_empty() {
                    return Err(NnError::dim("rank", "empty input shape"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Parameters this layer owns for the given per-sample input shape.
    pub fn param_count(&self, input: &[usize]) -> Result<ParamCount> {
        self.output_shape(input)?;
        Ok(match &self.kind {
            LayerKind::Conv2d {
                filters, kernel, ..
            } => {
                let cin = input[2];
                ParamCount {
                    trainable: kernel.0 * kernel.1 * cin * filters + filters,
                    non_trainable: 0,
                }
            }
            LayerKind::Dense { units, .. } => ParamCount {
                trainable: input[0] * units + units,
                non_trainable: 0,
            },
            LayerKind::BatchNorm { .. } => {
                let c = *input.last().expect("checked non-empty");
                ParamCount {
                    trainable: 2 * c,
                    non_trainable: 2 * c,
                }
            }
            _ => ParamCount::default(),
        })
    }
}

fn spatial(input: &[usize]) -> Result<[usize; 3]> {
    match input {
        [h, w, c] => Ok([*h, *w, *c]),
        _ => Err(NnError::dim(
            "rank",
            format!("expected a height x width x channels input, got {input:?}"),
        )),
    }
}

/// Propagates `input` through `specs`, returning each layer's output shape.
///
/// The first inconsistent layer is reported by name.
pub fn infer_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        shape = spec.output_shape(&shape).map_err(|e| e.in_layer(&spec.name))?;
        out.push(shape.clone());
    }
    Ok(out)
}

/// Exact `(total, trainable, non_trainable)` counts for a sequential chain.
pub fn count_params(specs: &[LayerSpec], input: &[usize]) -> Result<(usize, usize, usize)> {
    let mut shape = input.to_vec();
    let mut acc = ParamCount::default();
    for spec in specs {
        acc = acc + spec.param_count(&shape).map_err(|e| e.in_layer(&spec.name))?;
        shape = spec.output_shape(&shape).map_err(|e| e.in_layer(&spec.name))?;
    }
    Ok((acc.total(), acc.trainable, acc.non_trainable))
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        })
    }
}

impl std::str::FromStr for Padding {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            other => Err(NnError::Parameter(format!("unknown padding {other:?}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "softmax" => Ok(Activation::Softmax),
            other => Err(NnError::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(filters: usize, padding: Padding) -> LayerSpec {
        LayerSpec::new(
            "c",
            LayerKind::Conv2d {
                filters,
                kernel: (3, 3),
                padding,
                stride: (1, 1),
                activation: Activation::Relu,
            },
        )
    }

    #[test]
    fn first_conv_matches_table_row() {
        let c = conv(24, Padding::Valid);
        assert_eq!(c.output_shape(&[256, 256, 1]).unwrap(), vec![254, 254, 24]);
        assert_eq!(c.param_count(&[256, 256, 1]).unwrap().total(), 240);
    }

    #[test]
    fn pool_floors_odd_sizes() {
        let p = LayerSpec::new(
            "p",
            LayerKind::MaxPool2d {
                window: (2, 2),
                stride: (2, 2),
            },
        );
        assert_eq!(p.output_shape(&[254, 254, 24]).unwrap(), vec![127, 127, 24]);
        assert_eq!(p.output_shape(&[31, 31, 128]).unwrap(), vec![15, 15, 128]);
        assert!(p.output_shape(&[1, 4, 3]).is_err());
    }

    #[test]
    fn dense_and_batchnorm_counts() {
        let d = LayerSpec::new(
            "d",
            LayerKind::Dense {
                units: 35,
                activation: Activation::Softmax,
            },
        );
        assert_eq!(d.param_count(&[2352]).unwrap().total(), 82_355);
        let d2 = LayerSpec::new(
            "d2",
            LayerKind::Dense {
                units: 2352,
                activation: Activation::Relu,
            },
        );
        assert_eq!(d2.param_count(&[12544]).unwrap().total(), 29_505_840);
        let bn = LayerSpec::new(
            "bn",
            LayerKind::BatchNorm {
                epsilon: 1e-5,
                momentum: 0.9,
            },
        );
        let pc = bn.param_count(&[254, 254, 24]).unwrap();
        assert_eq!((pc.total(), pc.trainable, pc.non_trainable), (96, 48, 48));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut c = conv(4, Padding::Same);
        if let LayerKind::Conv2d { kernel, .. } = &mut c.kind {
            *kernel = (2, 2);
        }
        assert!(matches!(c.validate(), Err(NnError::Parameter(_))));
    }

    #[test]
    fn chain_error_names_layer() {
        let specs = vec![
            LayerSpec::new("flat", LayerKind::Flatten),
            LayerSpec::new("bad_conv", conv(2, Padding::Same).kind),
        ];
        match count_params(&specs, &[4, 4, 1]) {
            Err(NnError::Layer { layer, .. }) => assert_eq!(layer, "bad_conv"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dropout_rate_bounds() {
        let d = LayerSpec::new("d", LayerKind::Dropout { rate: 1.0 });
        assert!(d.validate().is_err());
        let d = LayerSpec::new("d", LayerKind::Dropout { rate: 0.0 });
        assert!(d.validate().is_ok());
    }
}
