//! Adam, sharpness-aware two-phase steps on top of it, and the exponential
//! learning-rate schedule.

use btn_tensor::{Checkpoint, Param, Tensor};
use serde_json::json;

use crate::error::{BtnError, Result};

/// `lr0 * gamma^epoch`, epochs counted from zero.
pub fn exp_lr(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

/// Adam with bias correction. Moment buffers follow the order of the
/// parameter slice given to `new`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Param], beta1: f64, beta2: f64, eps: f64) -> Adam {
        let zeros = |p: &Param| vec![0.0; p.to_vec().len()];
        Adam {
            beta1,
            beta2,
            eps,
            steps: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &[Param], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(BtnError::config(format!(
                "adam tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let mut w = p.to_vec();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            if g.len() != w.len() {
                return Err(BtnError::config(format!(
                    "gradient length mismatch for {}",
                    p.name()
                )));
            }
            for k in 0..w.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                w[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_data(w)?;
        }
        Ok(())
    }

    /// Stores moments as `adam.m.<name>` / `adam.v.<name>` and the step count
    /// in metadata.
    pub fn save_state(&self, params: &[Param], ckpt: &mut Checkpoint) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            let n = self.m[i].len();
            ckpt.push(format!("adam.m.{}", p.name()), &[n], self.m[i].clone())?;
            ckpt.push(format!("adam.v.{}", p.name()), &[n], self.v[i].clone())?;
        }
        ckpt.metadata.insert("adam_steps".into(), json!(self.steps));
        Ok(())
    }

    pub fn load_state(&mut self, params: &[Param], ckpt: &Checkpoint) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            for (kind, buf) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let name = format!("adam.{kind}.{}", p.name());
                let t = ckpt
                    .get(&name)
                    .ok_or_else(|| BtnError::config(format!("checkpoint lacks {name}")))?;
                if t.data.len() != buf.len() {
                    return Err(BtnError::config(format!("{name} has the wrong length")));
                }
                buf.copy_from_slice(&t.data);
            }
        }
        self.steps = ckpt
            .metadata
            .get("adam_steps")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| BtnError::config("checkpoint lacks adam_steps"))?;
        Ok(())
    }
}

/// Current gradients, zeros where none were recorded.
pub fn gradients(params: &[Param]) -> Vec<Vec<f64>> {
    params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.to_vec().len()]))
        .collect()
}

fn zero_grads(params: &[Param]) {
    params.iter().for_each(Param::zero_grad);
}

/// Evaluates the loss, checks it is finite and backpropagates.
fn loss_and_grads(
    params: &[Param],
    f: &mut dyn FnMut() -> Result<Tensor>,
    context: &str,
) -> Result<(f64, Vec<Vec<f64>>)> {
    zero_grads(params);
    let loss = f()?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(BtnError::NonFiniteLoss {
            loss: value,
            context: context.into(),
        });
    }
    loss.backward()?;
    Ok((value, gradients(params)))
}

/// The two gradient phases of a sharpness-aware step. Returns the loss at
/// the current point and the gradient at `w + rho * g / (||g|| + 1e-12)`
/// (global norm). Parameters are left exactly as they were on entry, also
/// when phase two fails.
pub fn sam_gradients(
    params: &[Param],
    rho: f64,
    f: &mut dyn FnMut() -> Result<Tensor>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (loss, g) = loss_and_grads(params, f, "sam phase 1")?;
    let norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let step = rho / (norm + 1e-12);
    let originals: Vec<Vec<f64>> = params.iter().map(Param::to_vec).collect();
    for ((p, w), gi) in params.iter().zip(&originals).zip(&g) {
        p.set_data(w.iter().zip(gi).map(|(w, g)| w + step * g).collect())?;
    }
    let perturbed = loss_and_grads(params, f, "sam phase 2");
    for (p, w) in params.iter().zip(originals) {
        p.set_data(w)?;
    }
    let (_, g2) = perturbed?;
    Ok((loss, g2))
}

/// Sharpness-aware step followed by one Adam update; returns the loss
/// before the step.
pub fn sam_step(
    params: &[Param],
    adam: &mut Adam,
    lr: f64,
    rho: f64,
    f: &mut dyn FnMut() -> Result<Tensor>,
) -> Result<f64> {
    let (loss, g) = sam_gradients(params, rho, f)?;
    adam.step(params, &g, lr)?;
    Ok(loss)
}

/// Plain Adam step on the current gradient.
pub fn adam_step(
    params: &[Param],
    adam: &mut Adam,
    lr: f64,
    f: &mut dyn FnMut() -> Result<Tensor>,
) -> Result<f64> {
    let (loss, g) = loss_and_grads(params, f, "adam step")?;
    adam.step(params, &g, lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(w: &Param) -> impl FnMut() -> Result<Tensor> + '_ {
        move || {
            let t = w.tensor();
            Ok(t.mul(&t)?.sum())
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(exp_lr(0.1, 1.0, 7), 0.1);
        assert!((exp_lr(1.0, 0.9, 2) - 0.81).abs() < 1e-15);
        let lrs: Vec<f64> = (0..5).map(|e| exp_lr(1e-3, 0.995, e)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr * sign(g)
        let w = Param::new("w", Tensor::new(vec![1.0, -2.0], &[2]).unwrap(), true);
        let params = [w.clone()];
        let mut adam = Adam::new(&params, 0.9, 0.999, 0.0);
        adam.step(&params, &[vec![3.0, -0.5]], 0.1).unwrap();
        let v = w.to_vec();
        assert!((v[0] - 0.9).abs() < 1e-12 && (v[1] + 1.9).abs() < 1e-12);
    }

    #[test]
    fn sam_restores_parameters_before_update() {
        let w = Param::new("w", Tensor::new(vec![0.3, -1.2, 2.0], &[3]).unwrap(), true);
        let before = w.to_vec();
        let params = [w.clone()];
        let (loss, g) = sam_gradients(&params, 0.5, &mut quadratic(&w)).unwrap();
        assert_eq!(w.to_vec(), before);
        assert!((loss - 5.53).abs() < 1e-12);
        // phase-two gradient is 2 (w + rho g / |g|)
        let g1: Vec<f64> = before.iter().map(|x| 2.0 * x).collect();
        let n = g1.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..3 {
            let want = 2.0 * (before[k] + 0.5 * g1[k] / (n + 1e-12));
            assert!((g[0][k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sam_quadratic_descends() {
        let w = Param::new("w", Tensor::scalar(1.0), true);
        let params = [w.clone()];
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        let mut prev = 1.0f64;
        for _ in 0..50 {
            sam_step(&params, &mut adam, 0.01, 0.1, &mut quadratic(&w)).unwrap();
            let now = w.to_vec()[0].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_loss_aborts_without_change() {
        let w = Param::new("w", Tensor::new(vec![1.0], &[1]).unwrap(), true);
        let params = [w.clone()];
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        let mut f = || Ok(w.tensor().sum().scale(f64::NAN));
        let err = sam_step(&params, &mut adam, 0.1, 0.05, &mut f).unwrap_err();
        assert!(matches!(err, BtnError::NonFiniteLoss { .. }));
        assert_eq!(w.to_vec(), vec![1.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let w = Param::new("w", Tensor::new(vec![1.0, 2.0], &[2]).unwrap(), true);
        let params = [w.clone()];
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        adam.step(&params, &[vec![0.5, -0.5]], 0.01).unwrap();
        let mut ckpt = Checkpoint::new();
        adam.save_state(&params, &mut ckpt).unwrap();
        let mut other = Adam::new(&params, 0.9, 0.999, 1e-8);
        other.load_state(&params, &ckpt).unwrap();
        assert_eq!(other.steps(), 1);
        assert_eq!(other.m, adam.m);
        assert_eq!(other.v, adam.v);
        assert!(other.load_state(&params, &Checkpoint::new()).is_err());
    }
}
