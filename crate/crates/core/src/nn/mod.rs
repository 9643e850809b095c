//! Minimal deep-learning engine: tensors, layers with hand-written backward
//! passes, loss, SGD and gradient verification. All arithmetic is `f64`.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
mod error;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod norm;
pub mod params;
pub mod pool;
mod rng;
pub mod spec;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, gradient_check_softmax_ce};
pub use params::{sgd_step, Gradients, LayerGrads, LayerParams, Param, ParameterBundle};
pub use rng::Rng;
pub use spec::{count_params, infer_shapes, Activation, LayerKind, LayerSpec, Padding, ParamCount};
pub use tensor::Tensor;

/// Whether layers behave as during training (batch statistics, dropout
/// masks) or inference (running statistics, identity dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
