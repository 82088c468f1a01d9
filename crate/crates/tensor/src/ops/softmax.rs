use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops::reduce::split_axis;
use crate::tensor::Tensor;

/// Visits every 1-D lane along the reduced axis as (start offset, stride).
fn for_each_lane(outer: usize, len: usize, inner: usize, mut f: impl FnMut(usize, usize)) {
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner);
        }
    }
}

impl Tensor {
    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis("softmax", self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for_each_lane(outer, len, inner, |start, stride| {
            let max = (0..len)
                .map(|k| x[start + k * stride])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (x[start + k * stride] - max).exp();
                y[start + k * stride] = e;
                total += e;
            }
            for k in 0..len {
                y[start + k * stride] /= total;
            }
        });
        let y = Arc::new(y);
        let ys = y.clone();
        Ok(Tensor::from_op_shared(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for_each_lane(outer, len, inner, |start, stride| {
                    let dot: f64 = (0..len)
                        .map(|k| g[start + k * stride] * ys[start + k * stride])
                        .sum();
                    for k in 0..len {
                        let at = start + k * stride;
                        gx[at] = ys[at] * (g[at] - dot);
                    }
                });
                vec![Some(gx)]
            },
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis("log_softmax", self.shape(), axis)?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for_each_lane(outer, len, inner, |start, stride| {
            let max = (0..len)
                .map(|k| x[start + k * stride])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..len)
                    .map(|k| (x[start + k * stride] - max).exp())
                    .sum::<f64>()
                    .ln();
            for k in 0..len {
                y[start + k * stride] = x[start + k * stride] - lse;
            }
        });
        let y = Arc::new(y);
        let ys = y.clone();
        Ok(Tensor::from_op_shared(
            "log_softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for_each_lane(outer, len, inner, |start, stride| {
                    let total: f64 = (0..len).map(|k| g[start + k * stride]).sum();
                    for k in 0..len {
                        let at = start + k * stride;
                        gx[at] = g[at] - ys[at].exp() * total;
                    }
                });
                vec![Some(gx)]
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `[B, N]`
    /// logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::invalid(
                "cross_entropy",
                shape,
                "logits must be [B, N]",
            ));
        }
        let (b, n) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(TensorError::mismatch("cross_entropy", shape, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                size: n,
            });
        }
        let x = self.data();
        let mut probs = vec![0.0; b * n];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss -= row[label] - max - total.ln();
            for (p, v) in probs[r * n..(r + 1) * n].iter_mut().zip(row) {
                *p = (v - max).exp() / total;
            }
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            Vec::new(),
            vec![loss],
            vec![self.clone()],
            move |g, _| {
                let scale = g[0] / b as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    gx[r * n + label] -= scale;
                }
                vec![Some(gx)]
            },
        ))
    }
}
