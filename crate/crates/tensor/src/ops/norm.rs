use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Normalised values and inverse std for each contiguous group of `len`.
fn normalize(x: &[f64], len: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(x.len() / len);
    for (src, dst) in x.chunks(len).zip(xhat.chunks_mut(len)) {
        let mean = src.iter().sum::<f64>() / len as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * r;
        }
        rstd.push(r);
    }
    (xhat, rstd)
}

/// Gradient through `xhat = (x - mean) * rstd` for one group, given
/// `dxhat`.
fn normalize_backward(dxhat: &[f64], xhat: &[f64], rstd: f64, out: &mut [f64]) {
    let n = dxhat.len() as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    for ((o, d), x) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = rstd * (d - mean_d - x * mean_dx);
    }
}

fn check_affine(op: &'static str, t: Option<&Tensor>, len: usize) -> Result<()> {
    match t {
        Some(t) if t.shape() != [len] => Err(TensorError::mismatch(op, t.shape(), &[len])),
        _ => Ok(()),
    }
}

impl Tensor {
    /// Layer normalisation over the last axis with optional gain and shift of
    /// shape `[D]`.
    pub fn layer_norm(&self, gamma: Option<&Tensor>, beta: Option<&Tensor>, eps: f64) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| TensorError::invalid("layer_norm", self.shape(), "rank 0"))?;
        check_affine("layer_norm", gamma, d)?;
        check_affine("layer_norm", beta, d)?;
        let (xhat, rstd) = normalize(self.data(), d, eps);
        let g_data = gamma.map(|g| g.data_arc());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            if let Some(g) = &g_data {
                row.iter_mut().zip(g.iter()).for_each(|(v, g)| *v *= g);
            }
            if let Some(b) = beta {
                row.iter_mut().zip(b.data()).for_each(|(v, b)| *v += b);
            }
        }
        let mut inputs = vec![self.clone()];
        let has_gamma = gamma.is_some();
        inputs.extend(gamma.cloned());
        inputs.extend(beta.cloned());
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            inputs,
            move |g, need| {
                let mut grads = Vec::with_capacity(need.len());
                grads.push(need[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    let mut dxhat = vec![0.0; d];
                    for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        dxhat.copy_from_slice(grow);
                        if let Some(gm) = &g_data {
                            dxhat.iter_mut().zip(gm.iter()).for_each(|(v, gm)| *v *= gm);
                        }
                        normalize_backward(&dxhat, xrow, rstd[r], &mut gx[r * d..(r + 1) * d]);
                    }
                    gx
                }));
                if has_gamma {
                    grads.push(need[1].then(|| {
                        let mut gg = vec![0.0; d];
                        for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                            for k in 0..d {
                                gg[k] += grow[k] * xrow[k];
                            }
                        }
                        gg
                    }));
                }
                if grads.len() < need.len() {
                    let needed = need[grads.len()];
                    grads.push(needed.then(|| {
                        let mut gb = vec![0.0; d];
                        for grow in g.chunks(d) {
                            gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                        }
                        gb
                    }));
                }
                grads
            },
        ))
    }

    /// Group normalisation of `[B, C, H, W]`: statistics per sample and per
    /// group of `C / groups` channels, then a per-channel affine `[C]`.
    /// Never mixes samples.
    pub fn group_norm(&self, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 || groups == 0 || !s[1].is_multiple_of(groups) {
            return Err(TensorError::invalid(
                "group_norm",
                s,
                format!("need [B, C, H, W] with C divisible by {groups} groups"),
            ));
        }
        let (c, hw) = (s[1], s[2] * s[3]);
        check_affine("group_norm", Some(gamma), c)?;
        check_affine("group_norm", Some(beta), c)?;
        let group_len = c / groups * hw;
        let (xhat, rstd) = normalize(self.data(), group_len, eps);
        let (gm, bt) = (gamma.data_arc(), beta.data_arc());
        let mut out = xhat.clone();
        for (k, plane) in out.chunks_mut(hw).enumerate() {
            let ch = k % c;
            plane.iter_mut().for_each(|v| *v = *v * gm[ch] + bt[ch]);
        }
        Ok(Tensor::from_op(
            "group_norm",
            s.to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, need| {
                let gx = need[0].then(|| {
                    let mut dxhat = g.to_vec();
                    for (k, plane) in dxhat.chunks_mut(hw).enumerate() {
                        let ch = k % c;
                        plane.iter_mut().for_each(|v| *v *= gm[ch]);
                    }
                    let mut gx = vec![0.0; g.len()];
                    for (r, ((d, x), o)) in dxhat
                        .chunks(group_len)
                        .zip(xhat.chunks(group_len))
                        .zip(gx.chunks_mut(group_len))
                        .enumerate()
                    {
                        normalize_backward(d, x, rstd[r], o);
                    }
                    gx
                });
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (k, (gp, xp)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = k % c;
                    gg[ch] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
                    gb[ch] += gp.iter().sum::<f64>();
                }
                vec![gx, need[1].then_some(gg), need[2].then_some(gb)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.9).sin() * 4.0 + 1.0);
        let y = x.layer_norm(None, None, 0.0).unwrap();
        for row in y.data().chunks(8) {
            let m = row.iter().sum::<f64>() / 8.0;
            let v = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_single_group_matches_layer_norm() {
        let x = Tensor::from_fn(&[2, 4, 3, 3], |i| (i as f64 * 0.37).cos() * 2.0);
        let gamma = Tensor::ones(&[4]);
        let beta = Tensor::zeros(&[4]);
        let a = x.group_norm(1, &gamma, &beta, 1e-5).unwrap();
        let b = x.reshape(&[2, 36]).unwrap().layer_norm(None, None, 1e-5).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(x.group_norm(3, &gamma, &beta, 1e-5).is_err());
    }
}
