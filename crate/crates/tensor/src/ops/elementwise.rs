use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Applies `f` elementwise; `df(x, y)` is the local derivative given input
/// and output.
fn unary(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xs = x.data_arc();
    let ys = std::sync::Arc::new(out);
    let ys_saved = ys.clone();
    Tensor::from_op_shared(op, x.shape().to_vec(), ys, vec![x.clone()], move |g, _| {
        let gx = g
            .iter()
            .zip(xs.iter().zip(ys_saved.iter()))
            .map(|(g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g, _| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            move |g, need| {
                let ga = need[0].then(|| g.iter().zip(b.iter()).map(|(g, b)| g * b).collect());
                let gb = need[1].then(|| g.iter().zip(a.iter()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g, _| vec![Some(g.iter().map(|v| v * s).collect())],
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        unary("ln", self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Tensor {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        unary(
            "relu",
            self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        unary(
            "gelu",
            self,
            |x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            |x, _| {
                let u = GELU_K * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    /// Inverted dropout. With `train == false` or `p == 0` this is the identity
    /// and draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, train: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(
            "dropout",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn add_rejects_mismatched_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn(&[4, 4], |i| i as f64);
        let y = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::ones(&[1000]);
        let y = x.dropout(0.25, true, &mut rng).unwrap();
        for &v in y.data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
        let kept = y.data().iter().filter(|v| **v > 0.0).count();
        assert!((650..850).contains(&kept), "{kept}");
    }

    #[test]
    fn relu_and_gelu_values() {
        let x = Tensor::new(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        let g = x.gelu();
        assert_eq!(g.data()[1], 0.0);
        assert!((g.data()[2] - 1.954_597_694).abs() < 1e-6);
    }
}
