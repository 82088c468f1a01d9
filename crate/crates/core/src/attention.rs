//! Multi-head attention over token sequences, the transformer encoder and the
//! per-channel positional table used by the batch head.

use btn_tensor::{LayerNorm, Linear, Param, ParamBuilder, Tensor, TensorError};
use rand::RngCore;

use crate::error::{BtnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize) -> Result<AttentionConfig> {
        if model_dim == 0 || num_heads == 0 || !model_dim.is_multiple_of(num_heads) {
            return Err(BtnError::config(format!(
                "attention model_dim {model_dim} must be a positive multiple of num_heads {num_heads}"
            )));
        }
        Ok(AttentionConfig { model_dim, num_heads })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// `[B, T, D] -> [B, H, T, D / H]`.
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let s = x.shape();
    let (b, t, d) = (s[0], s[1], s[2]);
    Ok(x.reshape(&[b, t, heads, d / heads])?.permute(&[0, 2, 1, 3])?)
}

/// `[B, H, T, hd] -> [B, T, H * hd]`.
fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let (b, h, t, hd) = (s[0], s[1], s[2], s[3]);
    Ok(x.permute(&[0, 2, 1, 3])?.reshape(&[b, t, h * hd])?)
}

/// Scaled dot-product attention with query, key, value and output
/// projections. Every batch item is processed independently.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, cfg: AttentionConfig) -> Result<MultiHeadAttention> {
        let d = cfg.model_dim;
        Ok(MultiHeadAttention {
            cfg,
            query: Linear::new(&mut pb.scope("query"), d, d, true)?,
            key: Linear::new(&mut pb.scope("key"), d, d, true)?,
            value: Linear::new(&mut pb.scope("value"), d, d, true)?,
            output: Linear::new(&mut pb.scope("output"), d, d, true)?,
        })
    }

    pub fn config(&self) -> AttentionConfig {
        self.cfg
    }

    fn check(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
        let d = self.cfg.model_dim;
        let (sq, sk, sv) = (q.shape(), k.shape(), v.shape());
        let ok = sq.len() == 3 && sk.len() == 3 && sq[2] == d && sk == sv && sk[0] == sq[0] && sk[2] == d;
        if !ok {
            let lhs = sq.to_vec();
            let rhs = if sk == sv { sk.to_vec() } else { sv.to_vec() };
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs,
                rhs,
            }
            .into());
        }
        Ok(())
    }

    /// Per-head attention weights `[B, H, Tq, Tk]`; every row sums to one.
    pub fn weights(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        self.check(q, k, k)?;
        self.weights_unchecked(q, k)
    }

    fn weights_unchecked(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        let h = self.cfg.num_heads;
        let qh = split_heads(&self.query.forward(q)?, h)?;
        let kh = split_heads(&self.key.forward(k)?, h)?;
        let scores = qh
            .matmul(&kh.transpose(2, 3)?)?
            .scale(1.0 / (self.cfg.head_dim() as f64).sqrt());
        Ok(scores.softmax(3)?)
    }

    /// Cross-attention: queries `[B, Tq, D]` attend over keys and values
    /// `[B, Tk, D]`; the result has the query's shape.
    pub fn cross_attend(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.check(q, k, v)?;
        let attn = self.weights_unchecked(q, k)?;
        let vh = split_heads(&self.value.forward(v)?, self.cfg.num_heads)?;
        let mixed = merge_heads(&attn.matmul(&vh)?)?;
        self.output.forward(&mixed).map_err(Into::into)
    }

    pub fn self_attend(&self, x: &Tensor) -> Result<Tensor> {
        self.cross_attend(x, x, x)
    }
}

/// `PE[s]`: `sin(s)` for even `s`, `cos(s)` for odd `s`.
pub fn channel_position_table(len: usize) -> Vec<f64> {
    (0..len)
        .map(|s| {
            let x = s as f64;
            if s % 2 == 0 {
                x.sin()
            } else {
                x.cos()
            }
        })
        .collect()
}

/// Adds the spatial position table to `[B, N, S]`, identically for every
/// batch item and every channel.
pub fn channel_positional_encode(e: &Tensor) -> Result<Tensor> {
    let s = e.shape();
    if s.len() != 3 {
        return Err(TensorError::InvalidShape {
            op: "channel_positional_encode",
            shape: s.to_vec(),
            reason: "expected [B, N, S]".into(),
        }
        .into());
    }
    let table = Tensor::new(channel_position_table(s[2]), &[1, 1, s[2]])?;
    Ok(e.add(&table.expand(s)?)?)
}

/// Reborrows an optional generator for one call.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    rng.as_mut().map(|r| &mut **r as &mut dyn RngCore)
}

fn maybe_dropout(x: Tensor, p: f64, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
    match rng {
        Some(rng) if p > 0.0 => Ok(x.dropout(p, true, rng)?),
        _ => Ok(x),
    }
}

/// Pre-norm block: `x + attn(norm(x))`, then `x + mlp(norm(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub mlp_norm: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl EncoderBlock {
    fn new(pb: &mut ParamBuilder, cfg: AttentionConfig, mlp_ratio: usize) -> Result<EncoderBlock> {
        let d = cfg.model_dim;
        Ok(EncoderBlock {
            attn_norm: LayerNorm::new(&mut pb.scope("attn_norm"), d)?,
            attn: MultiHeadAttention::new(&mut pb.scope("attn"), cfg)?,
            mlp_norm: LayerNorm::new(&mut pb.scope("mlp_norm"), d)?,
            mlp_in: Linear::new(&mut pb.scope("mlp_in"), d, d * mlp_ratio, true)?,
            mlp_out: Linear::new(&mut pb.scope("mlp_out"), d * mlp_ratio, d, true)?,
        })
    }

    fn forward(&self, x: &Tensor, dropout: f64, mut rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let a = self.attn.self_attend(&self.attn_norm.forward(x)?)?;
        let x = x.add(&maybe_dropout(a, dropout, reborrow(&mut rng))?)?;
        let m = self
            .mlp_out
            .forward(&self.mlp_in.forward(&self.mlp_norm.forward(&x)?)?.gelu())?;
        Ok(x.add(&maybe_dropout(m, dropout, rng)?)?)
    }
}

/// Transformer encoder with a learned class token and learned positional
/// embeddings for up to `max_tokens` input tokens.
#[derive(Clone, Debug)]
pub struct VitEncoder {
    cfg: AttentionConfig,
    pub class_token: Param,
    pub positions: Param,
    pub blocks: Vec<EncoderBlock>,
    pub dropout: f64,
}

impl VitEncoder {
    pub fn new(
        pb: &mut ParamBuilder,
        cfg: AttentionConfig,
        depth: usize,
        mlp_ratio: usize,
        max_tokens: usize,
        dropout: f64,
    ) -> Result<VitEncoder> {
        if depth == 0 || mlp_ratio == 0 || max_tokens == 0 {
            return Err(BtnError::config(
                "encoder depth, mlp_ratio and max_tokens must be positive",
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(BtnError::config(format!("dropout {dropout} outside [0, 1)")));
        }
        let d = cfg.model_dim;
        let class_token = pb.uniform("class_token", &[1, 1, d], 1.0)?;
        let positions = pb.uniform("positions", &[1, max_tokens + 1, d], 0.02)?;
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(&mut pb.scope(&format!("block{i}")), cfg, mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(VitEncoder {
            cfg,
            class_token,
            positions,
            blocks,
            dropout,
        })
    }

    pub fn max_tokens(&self) -> usize {
        self.positions.shape()[1] - 1
    }

    /// `[B, T, D] -> [B, T + 1, D]` with the class token first. Dropout is
    /// active only when `rng` is given.
    pub fn forward(&self, tokens: &Tensor, mut rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let s = tokens.shape();
        let d = self.cfg.model_dim;
        if s.len() != 3 || s[2] != d || s[1] > self.max_tokens() {
            return Err(TensorError::ShapeMismatch {
                op: "vit_encoder",
                lhs: s.to_vec(),
                rhs: vec![s.first().copied().unwrap_or(0), self.max_tokens(), d],
            }
            .into());
        }
        let (b, t) = (s[0], s[1]);
        let cls = self.class_token.tensor().expand(&[b, 1, d])?;
        let pos = self
            .positions
            .tensor()
            .narrow(1, 0, t + 1)?
            .expand(&[b, t + 1, d])?;
        let mut x = Tensor::concat(&[cls, tokens.clone()], 1)?.add(&pos)?;
        for block in &self.blocks {
            x = block.forward(&x, self.dropout, reborrow(&mut rng))?;
        }
        Ok(x)
    }
}
