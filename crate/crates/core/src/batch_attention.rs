//! Attention across the batch: each class channel compares the flattened
//! feature maps of all samples and mixes their class predictions.

use btn_tensor::{Conv2d, ParamBuilder, Tensor, TensorError};

use crate::attention::channel_positional_encode;
use crate::error::{BtnError, Result};

/// Swaps the two leading axes: `[B, N, ...] -> [N, B, ...]`.
pub fn permute_bc(x: &Tensor) -> Result<Tensor> {
    let rank = x.rank();
    if rank < 2 {
        return Err(TensorError::InvalidShape {
            op: "permute_bc",
            shape: x.shape().to_vec(),
            reason: "rank must be at least 2".into(),
        }
        .into());
    }
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(0, 1);
    Ok(x.permute(&perm)?)
}

fn check_pair(e: &Tensor, p: &Tensor) -> Result<()> {
    let (se, sp) = (e.shape(), p.shape());
    if se.len() != 3 || sp.len() != 2 || se[..2] != sp[..] {
        return Err(TensorError::ShapeMismatch {
            op: "cba",
            lhs: se.to_vec(),
            rhs: sp.to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Per-channel batch attention `[N, B, B]`: row `b` of channel `n` is the
/// softmax over `c` of `<E[b, n, :], E[c, n, :]>`, optionally divided by
/// `sqrt(S)`.
pub fn cba_weights(e: &Tensor, scale: bool) -> Result<Tensor> {
    if e.rank() != 3 {
        return Err(TensorError::InvalidShape {
            op: "cba",
            shape: e.shape().to_vec(),
            reason: "expected [B, N, S]".into(),
        }
        .into());
    }
    let f = permute_bc(e)?;
    let mut gram = f.matmul(&f.transpose(1, 2)?)?;
    if scale {
        gram = gram.scale(1.0 / (e.shape()[2] as f64).sqrt());
    }
    Ok(gram.softmax(2)?)
}

/// Class batch attention. `e` is the positionally encoded embedding
/// `[B, N, S]`, `p` the per-sample class scores `[B, N]`; returns `[B, N]`
/// where entry `(b, n)` is the attention-weighted mean of `p[:, n]`.
pub fn cba(e: &Tensor, p: &Tensor, scale: bool) -> Result<Tensor> {
    check_pair(e, p)?;
    let (b, n) = (p.shape()[0], p.shape()[1]);
    let w = cba_weights(e, scale)?;
    let values = permute_bc(&p.reshape(&[b, n, 1])?)?;
    let mixed = w.matmul(&values)?;
    Ok(permute_bc(&mixed)?.reshape(&[b, n])?)
}

/// Class scores from the classifier, the batch attention, and their sum.
#[derive(Clone, Debug)]
pub struct PredictionTriple {
    p_vit: Tensor,
    p_cba: Tensor,
    p_bt: Tensor,
}

impl PredictionTriple {
    /// Builds the triple with `p_bt = p_vit + p_cba`.
    pub fn new(p_vit: Tensor, p_cba: Tensor) -> Result<PredictionTriple> {
        if p_vit.rank() != 2 {
            return Err(TensorError::InvalidShape {
                op: "prediction_triple",
                shape: p_vit.shape().to_vec(),
                reason: "expected [B, N]".into(),
            }
            .into());
        }
        let p_bt = p_vit.add(&p_cba)?;
        Ok(PredictionTriple { p_vit, p_cba, p_bt })
    }

    pub fn p_vit(&self) -> &Tensor {
        &self.p_vit
    }

    pub fn p_cba(&self) -> &Tensor {
        &self.p_cba
    }

    pub fn p_bt(&self) -> &Tensor {
        &self.p_bt
    }
}

/// Embeds a feature map into one channel per class and adds batch-attention
/// scores to the classifier's.
#[derive(Clone, Debug)]
pub struct BtHead {
    pub embed: Conv2d,
    num_classes: usize,
    scale: bool,
}

impl BtHead {
    /// The embedding is a 1x1 convolution `in_channels -> num_classes`.
    pub fn new(pb: &mut ParamBuilder, in_channels: usize, num_classes: usize, scale: bool) -> Result<BtHead> {
        if num_classes == 0 {
            return Err(BtnError::config("num_classes must be positive"));
        }
        Ok(BtHead {
            embed: Conv2d::new(&mut pb.scope("embed"), in_channels, num_classes, 1, 1, 0, true)?,
            num_classes,
            scale,
        })
    }

    pub fn from_parts(embed: Conv2d, num_classes: usize, scale: bool) -> BtHead {
        BtHead {
            embed,
            num_classes,
            scale,
        }
    }

    /// `[B, C, H, W] -> [B, N, H * W]`.
    pub fn embed(&self, f: &Tensor) -> Result<Tensor> {
        if self.embed.out_channels() != self.num_classes {
            return Err(BtnError::config(format!(
                "embedding produces {} channels but there are {} classes",
                self.embed.out_channels(),
                self.num_classes
            )));
        }
        let e = self.embed.forward(f)?;
        let s = e.shape();
        Ok(e.reshape(&[s[0], s[1], s[2] * s[3]])?)
    }

    pub fn forward(&self, f: &Tensor, p_vit: &Tensor) -> Result<PredictionTriple> {
        let e = channel_positional_encode(&self.embed(f)?)?;
        let p_cba = cba(&e, p_vit, self.scale)?;
        PredictionTriple::new(p_vit.clone(), p_cba)
    }
}
