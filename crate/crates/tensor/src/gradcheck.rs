//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values with recording
//! disabled, so it is independent of every backward rule it checks.

use crate::error::{Result, TensorError};
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// One entry per input: ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂).
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares backward gradients of the scalar `f(inputs)` with central
/// differences of step `h` for every element of every input.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().into_leaf(true)).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(TensorError::Contract("gradcheck needs a scalar function".into()));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let base = inputs[which].to_vec();
        let shape = inputs[which].shape().to_vec();
        let mut grad = vec![0.0; base.len()];
        for (k, g) in grad.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = base.clone();
                data[k] += delta;
                let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                probe[which] = Tensor::new(data, &shape)?;
                no_grad(|| f(&probe))?.item()
            };
            *g = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        numeric.push(grad);
    }
    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    Ok(GradCheck {
        relative_errors,
        analytic,
        numeric,
    })
}

/// Reduces a tensor to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct amount.
pub fn weighted_sum(t: &Tensor, seed: u64) -> Result<Tensor> {
    let w = Tensor::from_fn(t.shape(), |i| {
        let x = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    });
    Ok(t.mul(&w)?.sum())
}
