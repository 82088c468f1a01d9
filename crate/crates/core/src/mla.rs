//! Per-level landmark/image fusion, the multi-level cascade that carries low
//! and mid level features up to the top level, and the token sequence fed to
//! the encoder.

use btn_tensor::{Conv2d, ParamBuilder, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, MultiHeadAttention};
use crate::error::{BtnError, Result};

/// Feature maps of the three semantic levels, finest first.
#[derive(Clone, Debug)]
pub struct LevelFeatures {
    pub s1: Tensor,
    pub s2: Tensor,
    pub s3: Tensor,
}

impl LevelFeatures {
    /// Each level is `[B, C, H, W]` with a shared `B` and spatial size that
    /// never grows with depth.
    pub fn new(s1: Tensor, s2: Tensor, s3: Tensor) -> Result<LevelFeatures> {
        let levels = LevelFeatures { s1, s2, s3 };
        let [a, b, c] = levels.levels();
        for t in [a, b, c] {
            if t.rank() != 4 || t.shape()[0] != a.shape()[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "level_features",
                    lhs: a.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                }
                .into());
            }
        }
        let area = |t: &Tensor| t.shape()[2] * t.shape()[3];
        if area(a) < area(b) || area(b) < area(c) {
            return Err(BtnError::config("level spatial sizes must not grow with depth"));
        }
        Ok(levels)
    }

    pub fn levels(&self) -> [&Tensor; 3] {
        [&self.s1, &self.s2, &self.s3]
    }

    pub fn batch(&self) -> usize {
        self.s1.shape()[0]
    }
}

/// `[B, C, H, W] -> [B, H * W, C]`.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::InvalidShape {
            op: "to_tokens",
            shape: s.to_vec(),
            reason: "expected [B, C, H, W]".into(),
        }
        .into());
    }
    Ok(x.reshape(&[s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])?)
}

/// `[B, H * W, C] -> [B, C, H, W]`.
pub fn from_tokens(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 3 || s[1] != h * w {
        return Err(TensorError::InvalidShape {
            op: "from_tokens",
            shape: s.to_vec(),
            reason: format!("expected [B, {}, C]", h * w),
        }
        .into());
    }
    Ok(t.permute(&[0, 2, 1])?.reshape(&[s[0], s[2], h, w])?)
}

/// Which branch supplies the queries of the per-level fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    #[default]
    Landmark,
    Image,
}

/// Cross-attention between the two branches at one level; the output keeps
/// the input shape.
#[derive(Clone, Debug)]
pub struct LevelFuse {
    pub attn: MultiHeadAttention,
    pub query: QuerySource,
}

impl LevelFuse {
    pub fn new(
        pb: &mut ParamBuilder,
        channels: usize,
        heads: usize,
        query: QuerySource,
    ) -> Result<LevelFuse> {
        let cfg = AttentionConfig::new(channels, heads)?;
        Ok(LevelFuse {
            attn: MultiHeadAttention::new(&mut pb.scope("attn"), cfg)?,
            query,
        })
    }

    /// Both inputs are `[B, C, H, W]` with identical shapes.
    pub fn forward(&self, f_img: &Tensor, f_lmk: &Tensor) -> Result<Tensor> {
        if f_img.shape() != f_lmk.shape() || f_img.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "level_fuse",
                lhs: f_img.shape().to_vec(),
                rhs: f_lmk.shape().to_vec(),
            }
            .into());
        }
        let (img, lmk) = (to_tokens(f_img)?, to_tokens(f_lmk)?);
        let (q, kv) = match self.query {
            QuerySource::Landmark => (lmk, img),
            QuerySource::Image => (img, lmk),
        };
        let out = self.attn.cross_attend(&q, &kv, &kv)?;
        from_tokens(&out, f_img.shape()[2], f_img.shape()[3])
    }
}

/// Intermediate and final maps of the multi-level cascade.
#[derive(Clone, Debug)]
pub struct MlaOutput {
    /// Mid level after attending to the downsampled low level.
    pub low_to_mid: Tensor,
    /// Top level after attending to the downsampled `low_to_mid`.
    pub fused: Tensor,
}

/// Two-step cascade: the mid level queries a strided convolution of the low
/// level, then the top level queries a strided convolution of that result.
#[derive(Clone, Debug)]
pub struct Mla {
    pub down_low: Conv2d,
    pub attend_mid: MultiHeadAttention,
    pub down_mid: Conv2d,
    pub attend_top: MultiHeadAttention,
}

/// Integer ratio between consecutive level sizes.
pub(crate) fn level_ratio(hi: usize, lo: usize) -> Result<usize> {
    if lo == 0 || hi < lo || !hi.is_multiple_of(lo) {
        return Err(BtnError::config(format!(
            "level size {lo} does not evenly divide {hi}"
        )));
    }
    Ok(hi / lo)
}

impl Mla {
    /// `channels` and `sizes` describe the three levels (square maps).
    pub fn new(pb: &mut ParamBuilder, channels: [usize; 3], sizes: [usize; 3], heads: usize) -> Result<Mla> {
        let r12 = level_ratio(sizes[0], sizes[1])?;
        let r23 = level_ratio(sizes[1], sizes[2])?;
        Ok(Mla {
            down_low: Conv2d::new(
                &mut pb.scope("down_low"),
                channels[0],
                channels[1],
                3,
                r12,
                1,
                true,
            )?,
            attend_mid: MultiHeadAttention::new(
                &mut pb.scope("attend_mid"),
                AttentionConfig::new(channels[1], heads)?,
            )?,
            down_mid: Conv2d::new(
                &mut pb.scope("down_mid"),
                channels[1],
                channels[2],
                3,
                r23,
                1,
                true,
            )?,
            attend_top: MultiHeadAttention::new(
                &mut pb.scope("attend_top"),
                AttentionConfig::new(channels[2], heads)?,
            )?,
        })
    }

    fn attend(attn: &MultiHeadAttention, target: &Tensor, source: &Tensor) -> Result<Tensor> {
        if source.shape() != target.shape() {
            return Err(BtnError::config(format!(
                "downsampled map {:?} does not match level {:?}",
                source.shape(),
                target.shape()
            )));
        }
        let kv = to_tokens(source)?;
        let out = attn.cross_attend(&to_tokens(target)?, &kv, &kv)?;
        from_tokens(&out, target.shape()[2], target.shape()[3])
    }

    pub fn forward_parts(&self, levels: &LevelFeatures) -> Result<MlaOutput> {
        let low_to_mid = Self::attend(&self.attend_mid, &levels.s2, &self.down_low.forward(&levels.s1)?)?;
        let fused = Self::attend(&self.attend_top, &levels.s3, &self.down_mid.forward(&low_to_mid)?)?;
        Ok(MlaOutput { low_to_mid, fused })
    }

    /// `[B, C3, H3, W3]`.
    pub fn forward(&self, levels: &LevelFeatures) -> Result<Tensor> {
        Ok(self.forward_parts(levels)?.fused)
    }
}

/// Maps every level onto the top level's grid with `dim` channels
/// (a patch-embedding convolution whose kernel equals its stride) and joins
/// the tokens of all levels, finest level first.
#[derive(Clone, Debug)]
pub struct VitInputFuse {
    pub embeds: Vec<Conv2d>,
    sizes: [usize; 3],
}

impl VitInputFuse {
    pub fn new(
        pb: &mut ParamBuilder,
        channels: [usize; 3],
        sizes: [usize; 3],
        dim: usize,
    ) -> Result<VitInputFuse> {
        let embeds = (0..3)
            .map(|l| {
                let patch = level_ratio(sizes[l], sizes[2])?;
                Ok(Conv2d::new(
                    &mut pb.scope(&format!("embed{}", l + 1)),
                    channels[l],
                    dim,
                    patch,
                    patch,
                    0,
                    true,
                )?)
            })
            .collect::<Result<_>>()?;
        Ok(VitInputFuse { embeds, sizes })
    }

    /// Tokens contributed by each level.
    pub fn token_counts(&self) -> [usize; 3] {
        [self.sizes[2] * self.sizes[2]; 3]
    }

    pub fn num_tokens(&self) -> usize {
        self.token_counts().iter().sum()
    }

    /// `[B, T1 + T2 + T3, D]`.
    pub fn forward(&self, levels: &LevelFeatures) -> Result<Tensor> {
        let tokens = self
            .embeds
            .iter()
            .zip(levels.levels())
            .map(|(conv, s)| to_tokens(&conv.forward(s)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::concat(&tokens, 1)?)
    }
}
