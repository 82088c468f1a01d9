//! Shared fixtures and scalar reference implementations for the
//! integration tests.
#![allow(dead_code)]

use btn_core::attention::MultiHeadAttention;
use btn_core::config::RunConfig;
use btn_core::model::ModelConfig;
use btn_tensor::{Linear, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// The smallest model that exercises every component.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        level_channels: [4, 4, 8],
        level_sizes: [4, 2, 1],
        norm_groups: 2,
        fuse_heads: 2,
        mla_heads: 2,
        vit_dim: 8,
        vit_heads: 2,
        vit_depth: 1,
        ..ModelConfig::default()
    }
}

/// A run that trains the tiny model for a couple of epochs in well under a
/// second.
pub fn tiny_run() -> RunConfig {
    let mut cfg = RunConfig {
        model: tiny_model(),
        ..RunConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.eval_batch_size = 5;
    cfg.data.n_train = 12;
    cfg.data.n_val = 7;
    cfg
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scalar class batch attention: for each class `n` and sample `b`,
/// softmax over `c` of `<e[b,n,:], e[c,n,:]>` (optionally over `sqrt(S)`),
/// then the weighted mean of `p[c, n]`.
pub fn cba_loops(e: &[f64], p: &[f64], b: usize, n: usize, s: usize, scale: bool) -> Vec<f64> {
    let at = |bi: usize, ni: usize, si: usize| e[(bi * n + ni) * s + si];
    let mut out = vec![0.0; b * n];
    for ni in 0..n {
        for bi in 0..b {
            let mut scores = vec![0.0; b];
            for (ci, score) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for si in 0..s {
                    dot += at(bi, ni, si) * at(ci, ni, si);
                }
                *score = if scale { dot / (s as f64).sqrt() } else { dot };
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut acc = 0.0;
            for ci in 0..b {
                acc += exps[ci] / z * p[ci * n + ni];
            }
            out[bi * n + ni] = acc;
        }
    }
    out
}

fn affine(l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = l.weight.to_vec();
    let b = l.bias.as_ref().map(|b| b.to_vec());
    let (out, inp) = (l.weight.shape()[0], l.weight.shape()[1]);
    (0..out)
        .map(|o| {
            let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..inp {
                acc += w[o * inp + i] * x[i];
            }
            acc
        })
        .collect()
}

/// Scalar multi-head cross-attention of one sample: `q` is `[Tq][D]`,
/// `kv` is `[Tk][D]`.
pub fn attention_loops(attn: &MultiHeadAttention, q: &[Vec<f64>], kv: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cfg = attn.config();
    let (h, hd) = (cfg.num_heads, cfg.head_dim());
    let qs: Vec<Vec<f64>> = q.iter().map(|t| affine(&attn.query, t)).collect();
    let ks: Vec<Vec<f64>> = kv.iter().map(|t| affine(&attn.key, t)).collect();
    let vs: Vec<Vec<f64>> = kv.iter().map(|t| affine(&attn.value, t)).collect();
    qs.iter()
        .map(|qt| {
            let mut mixed = vec![0.0; cfg.model_dim];
            for head in 0..h {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|kt| {
                        qt[r.clone()]
                            .iter()
                            .zip(&kt[r.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, vt) in vs.iter().enumerate() {
                    for d in r.clone() {
                        mixed[d] += exps[j] / z * vt[d];
                    }
                }
            }
            affine(&attn.output, &mixed)
        })
        .collect()
}

/// `[B, T, D]` tensor data as per-sample token lists.
pub fn token_rows(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (b, n, d) = (s[0], s[1], s[2]);
    (0..b)
        .map(|bi| {
            (0..n)
                .map(|ti| t.data()[(bi * n + ti) * d..(bi * n + ti + 1) * d].to_vec())
                .collect()
        })
        .collect()
}

/// Finite-difference check of the full training loss with respect to up to
/// `per_param` randomly chosen entries of every trainable parameter.
/// Returns the relative error over all sampled entries together, and the
/// number of entries checked.
pub fn end_to_end_fd(
    model: &btn_core::model::Btn,
    x: &Tensor,
    labels: &[usize],
    weights: &btn_core::model::LossWeights,
    per_param: usize,
    seed: u64,
) -> (f64, usize) {
    let loss = || {
        model
            .forward_train(x, None)
            .unwrap()
            .loss(labels, weights)
            .unwrap()
    };
    model.params().zero_grad();
    loss().backward().unwrap();
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let h = 1e-6;
    for p in model.params().trainable() {
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.to_vec().len()]);
        let base = p.to_vec();
        for _ in 0..per_param.min(base.len()) {
            let k = rng.gen_range(0..base.len());
            let eval = |delta: f64| {
                let mut d = base.clone();
                d[k] += delta;
                p.set_data(d).unwrap();
                btn_tensor::no_grad(|| loss().item().unwrap())
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            p.set_data(base.clone()).unwrap();
            analytic.push(grad[k]);
            numeric.push(fd);
        }
    }
    let n = analytic.len();
    (btn_tensor::gradcheck::relative_error(&analytic, &numeric), n)
}
