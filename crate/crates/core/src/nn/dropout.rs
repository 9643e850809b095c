use super::error::{NnError, Result};
use super::rng::Rng;
use super::tensor::Tensor;
use super::Mode;

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// returned mask holds the multiplier applied to each element. Inference is
/// the identity and draws nothing from `rng`.
pub fn dropout(input: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Parameter(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { scale })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            if mask.len() != grad_out.len() {
                return Err(NnError::dim("grad_out", "mask length differs from gradient"));
            }
            let g = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), g)
        }
    }
}
