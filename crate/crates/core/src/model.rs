//! The two-branch network: CNN backbones, per-level fusion, the encoder
//! classifier, and the training-only multi-level and batch heads.

use std::path::PathBuf;

use btn_tensor::{no_grad, Checkpoint, Conv2d, GroupNorm, LayerNorm, Linear, ParamBuilder, ParamSet, Tensor};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::attention::{reborrow, AttentionConfig, VitEncoder};
use crate::batch_attention::{BtHead, PredictionTriple};
use crate::error::{BtnError, Result};
use crate::mla::{level_ratio, LevelFeatures, LevelFuse, Mla, MlaOutput, QuerySource, VitInputFuse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Square input side length.
    pub image_size: usize,
    pub in_channels: usize,
    /// Channels of the three levels, finest first.
    pub level_channels: [usize; 3],
    /// Square spatial side of the three levels.
    pub level_sizes: [usize; 3],
    pub norm_groups: usize,
    pub fuse_heads: usize,
    pub fuse_query: QuerySource,
    pub mla_heads: usize,
    pub vit_dim: usize,
    pub vit_heads: usize,
    pub vit_depth: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    /// Divide the batch-attention Gram matrix by `sqrt(S)`.
    pub cba_scale: bool,
    /// Build the multi-level cascade; without it the batch head reads the
    /// top fused level directly.
    pub use_mla: bool,
    /// Build the batch head; without it a cascade (if any) feeds an
    /// auxiliary per-sample classifier.
    pub use_bt: bool,
    pub landmark_branch_frozen: bool,
    /// Checkpoint holding `landmark.*` parameters to load at construction.
    pub landmark_checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 3,
            image_size: 64,
            in_channels: 3,
            level_channels: [32, 64, 128],
            level_sizes: [16, 8, 4],
            norm_groups: 4,
            fuse_heads: 2,
            fuse_query: QuerySource::Landmark,
            mla_heads: 2,
            vit_dim: 64,
            vit_heads: 2,
            vit_depth: 2,
            mlp_ratio: 2,
            dropout: 0.0,
            cba_scale: false,
            use_mla: true,
            use_bt: true,
            landmark_branch_frozen: true,
            landmark_checkpoint: None,
        }
    }
}

impl ModelConfig {
    /// Narrow channels and a single encoder block; trains several times
    /// faster than the default on one core.
    pub fn compact() -> Self {
        ModelConfig {
            level_channels: [8, 16, 32],
            level_sizes: [8, 4, 2],
            norm_groups: 2,
            vit_dim: 32,
            vit_depth: 1,
            ..ModelConfig::default()
        }
    }

    /// Stride-2 convolutions applied before the first stage.
    pub fn stem_depth(&self) -> Result<usize> {
        let ratio = level_ratio(self.image_size, self.level_sizes[0])?;
        if ratio < 2 || !ratio.is_power_of_two() {
            return Err(BtnError::config(format!(
                "image_size {} over level size {} must be a power of two of at least 2",
                self.image_size, self.level_sizes[0]
            )));
        }
        Ok(ratio.trailing_zeros() as usize - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("in_channels", self.in_channels),
            ("norm_groups", self.norm_groups),
            ("vit_depth", self.vit_depth),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(BtnError::config(format!("model.{name} must be positive")));
            }
        }
        self.stem_depth()?;
        level_ratio(self.level_sizes[0], self.level_sizes[1])?;
        level_ratio(self.level_sizes[1], self.level_sizes[2])?;
        for c in self.level_channels {
            if c == 0 || c % self.norm_groups != 0 {
                return Err(BtnError::config(format!(
                    "level channels {c} must be a positive multiple of norm_groups {}",
                    self.norm_groups
                )));
            }
            AttentionConfig::new(c, self.fuse_heads)?;
            AttentionConfig::new(c, self.mla_heads)?;
        }
        AttentionConfig::new(self.vit_dim, self.vit_heads)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(BtnError::config(format!(
                "model.dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Which backbone a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Image,
    Landmark,
}

/// Convolution, group norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl ConvUnit {
    fn new(
        pb: &mut ParamBuilder,
        c_in: usize,
        c_out: usize,
        stride: usize,
        groups: usize,
    ) -> Result<ConvUnit> {
        Ok(ConvUnit {
            conv: Conv2d::new(&mut pb.scope("conv"), c_in, c_out, 3, stride, 1, false)?,
            norm: GroupNorm::new(&mut pb.scope("norm"), groups, c_out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu())
    }
}

/// Stride-2 stem followed by three stages of two units each; the first unit
/// of every stage downsamples to that level's size.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: Vec<ConvUnit>,
    pub stages: Vec<[ConvUnit; 2]>,
    in_channels: usize,
    image_size: usize,
}

impl Backbone {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Backbone> {
        let g = cfg.norm_groups;
        let mut c_prev = cfg.in_channels;
        let mut stem = Vec::new();
        for i in 0..cfg.stem_depth()? {
            stem.push(ConvUnit::new(
                &mut pb.scope(&format!("stem{i}")),
                c_prev,
                cfg.level_channels[0],
                2,
                g,
            )?);
            c_prev = cfg.level_channels[0];
        }
        let mut stages = Vec::new();
        let mut size_prev = cfg.level_sizes[0] * 2;
        for l in 0..3 {
            let c = cfg.level_channels[l];
            let stride = level_ratio(size_prev, cfg.level_sizes[l])?;
            let mut sb = pb.scope(&format!("stage{}", l + 1));
            let down = ConvUnit::new(&mut sb.scope("down"), c_prev, c, stride, g)?;
            let refine = ConvUnit::new(&mut sb.scope("refine"), c, c, 1, g)?;
            stages.push([down, refine]);
            c_prev = c;
            size_prev = cfg.level_sizes[l];
        }
        Ok(Backbone {
            stem,
            stages,
            in_channels: cfg.in_channels,
            image_size: cfg.image_size,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<LevelFeatures> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels || s[2] != self.image_size || s[3] != self.image_size {
            return Err(BtnError::config(format!(
                "input {:?} incompatible with [B, {}, {}, {}]",
                s, self.in_channels, self.image_size, self.image_size
            )));
        }
        let mut h = x.clone();
        for unit in &self.stem {
            h = unit.forward(&h)?;
        }
        let mut levels = Vec::with_capacity(3);
        for [down, refine] in &self.stages {
            h = refine.forward(&down.forward(&h)?)?;
            levels.push(h.clone());
        }
        let s3 = levels.pop().unwrap();
        let s2 = levels.pop().unwrap();
        let s1 = levels.pop().unwrap();
        LevelFeatures::new(s1, s2, s3)
    }
}

/// Whether a forward pass runs the training-only heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Outputs of a training forward pass. Which fields are present depends on
/// the configured heads.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub p_vit: Tensor,
    /// Present when the batch head is built.
    pub triple: Option<PredictionTriple>,
    /// Per-sample logits from the cascade when the batch head is absent.
    pub p_side: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub enum Output {
    Train(TrainOutput),
    Infer(Tensor),
}

/// Weights of the training loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight on the classifier's cross-entropy.
    pub lambda: f64,
    pub bt_term: bool,
    pub cba_term: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 2.0,
            bt_term: true,
            cba_term: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(BtnError::config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `lambda * CE(p_vit) + CE(p_bt) + CE(p_cba)`, with the last two terms
/// individually switchable.
pub fn loss(preds: &PredictionTriple, labels: &[usize], w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    let mut total = preds.p_vit().cross_entropy(labels)?.scale(w.lambda);
    if w.bt_term {
        total = total.add(&preds.p_bt().cross_entropy(labels)?)?;
    }
    if w.cba_term {
        total = total.add(&preds.p_cba().cross_entropy(labels)?)?;
    }
    Ok(total)
}

impl TrainOutput {
    /// The weighted loss over whichever heads are present; an auxiliary
    /// cascade head contributes an unweighted cross-entropy.
    pub fn loss(&self, labels: &[usize], w: &LossWeights) -> Result<Tensor> {
        let mut total = match &self.triple {
            Some(t) => loss(t, labels, w)?,
            None => {
                w.validate()?;
                self.p_vit.cross_entropy(labels)?.scale(w.lambda)
            }
        };
        if let Some(side) = &self.p_side {
            total = total.add(&side.cross_entropy(labels)?)?;
        }
        Ok(total)
    }
}

/// Every intermediate of one training-mode pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Image backbone levels before fusion.
    pub image_levels: LevelFeatures,
    /// Levels after landmark/image fusion.
    pub fused_levels: LevelFeatures,
    pub mla: Option<MlaOutput>,
    pub output: TrainOutput,
}

/// The full network with its parameter registry.
pub struct Btn {
    cfg: ModelConfig,
    params: ParamSet,
    pub image: Backbone,
    pub landmark: Backbone,
    pub image_proj: Vec<Conv2d>,
    pub fuse: Vec<LevelFuse>,
    pub vit_input: VitInputFuse,
    pub vit: VitEncoder,
    pub head_norm: LayerNorm,
    pub head: Linear,
    pub mla: Option<Mla>,
    pub bt: Option<BtHead>,
    /// 1x1 class embedding of the cascade output, averaged over space.
    pub side: Option<Conv2d>,
}

impl Btn {
    /// Parameters shared by every head configuration are drawn first, so
    /// variants built from one seed agree on them.
    pub fn new(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Btn> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut pb = ParamBuilder::new(&mut params, rng);
        let image = Backbone::new(&mut pb.scope("image"), cfg)?;
        let landmark = if cfg.landmark_branch_frozen {
            Backbone::new(&mut pb.frozen("landmark"), cfg)?
        } else {
            Backbone::new(&mut pb.scope("landmark"), cfg)?
        };
        let mut image_proj = Vec::new();
        let mut fuse = Vec::new();
        for (l, &c) in cfg.level_channels.iter().enumerate() {
            image_proj.push(Conv2d::new(
                &mut pb.scope(&format!("image_proj{}", l + 1)),
                c,
                c,
                1,
                1,
                0,
                true,
            )?);
            fuse.push(LevelFuse::new(
                &mut pb.scope(&format!("fuse{}", l + 1)),
                c,
                cfg.fuse_heads,
                cfg.fuse_query,
            )?);
        }
        let vit_input = VitInputFuse::new(
            &mut pb.scope("vit_input"),
            cfg.level_channels,
            cfg.level_sizes,
            cfg.vit_dim,
        )?;
        let vit = VitEncoder::new(
            &mut pb.scope("vit"),
            AttentionConfig::new(cfg.vit_dim, cfg.vit_heads)?,
            cfg.vit_depth,
            cfg.mlp_ratio,
            vit_input.num_tokens(),
            cfg.dropout,
        )?;
        let head_norm = LayerNorm::new(&mut pb.scope("head_norm"), cfg.vit_dim)?;
        let head = Linear::new(&mut pb.scope("head"), cfg.vit_dim, cfg.num_classes, true)?;
        let mla = if cfg.use_mla {
            Some(Mla::new(
                &mut pb.scope("mla"),
                cfg.level_channels,
                cfg.level_sizes,
                cfg.mla_heads,
            )?)
        } else {
            None
        };
        let c3 = cfg.level_channels[2];
        let bt = if cfg.use_bt {
            Some(BtHead::new(
                &mut pb.scope("bt"),
                c3,
                cfg.num_classes,
                cfg.cba_scale,
            )?)
        } else {
            None
        };
        let side = if cfg.use_mla && !cfg.use_bt {
            Some(Conv2d::new(
                &mut pb.scope("side"),
                c3,
                cfg.num_classes,
                1,
                1,
                0,
                true,
            )?)
        } else {
            None
        };
        let model = Btn {
            cfg: cfg.clone(),
            params,
            image,
            landmark,
            image_proj,
            fuse,
            vit_input,
            vit,
            head_norm,
            head,
            mla,
            bt,
            side,
        };
        if let Some(path) = &cfg.landmark_checkpoint {
            model.load_landmark(&Checkpoint::load(path)?)?;
        }
        Ok(model)
    }

    /// Copies every `landmark.*` parameter from a checkpoint.
    pub fn load_landmark(&self, ckpt: &Checkpoint) -> Result<()> {
        for p in self.params.iter().filter(|p| p.name().starts_with("landmark.")) {
            let t = ckpt
                .get(p.name())
                .ok_or_else(|| BtnError::config(format!("landmark checkpoint lacks {}", p.name())))?;
            if t.shape != p.shape() {
                return Err(BtnError::config(format!(
                    "{}: checkpoint shape {:?} differs from {:?}",
                    p.name(),
                    t.shape,
                    p.shape()
                )));
            }
            p.set_data(t.data.clone())?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn backbone_forward(&self, x: &Tensor, branch: Branch) -> Result<LevelFeatures> {
        match branch {
            Branch::Image => self.image.forward(x),
            Branch::Landmark => self.landmark.forward(x),
        }
    }

    /// Image levels before and after fusion with the landmark branch.
    fn fused(&self, x: &Tensor) -> Result<(LevelFeatures, LevelFeatures)> {
        let img = self.backbone_forward(x, Branch::Image)?;
        let lmk = self.backbone_forward(x, Branch::Landmark)?;
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            let f = self.image_proj[l].forward(img.levels()[l])?;
            out.push(self.fuse[l].forward(&f, lmk.levels()[l])?);
        }
        let s3 = out.pop().unwrap();
        let s2 = out.pop().unwrap();
        let s1 = out.pop().unwrap();
        Ok((img, LevelFeatures::new(s1, s2, s3)?))
    }

    /// Classifier logits `[B, N]` from the class token.
    fn classify(&self, s: &LevelFeatures, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let tokens = self.vit.forward(&self.vit_input.forward(s)?, rng)?;
        let (b, d) = (tokens.shape()[0], tokens.shape()[2]);
        let cls = tokens.narrow(1, 0, 1)?.reshape(&[b, d])?;
        Ok(self.head.forward(&self.head_norm.forward(&cls)?)?)
    }

    fn run_train(&self, x: &Tensor, mut rng: Option<&mut dyn RngCore>) -> Result<Trace> {
        let (image_levels, fused_levels) = self.fused(x)?;
        let p_vit = self.classify(&fused_levels, reborrow(&mut rng))?;
        let mla = match &self.mla {
            Some(m) => Some(m.forward_parts(&fused_levels)?),
            None => None,
        };
        let top = mla.as_ref().map_or(&fused_levels.s3, |m| &m.fused);
        let triple = match &self.bt {
            Some(bt) => Some(bt.forward(top, &p_vit)?),
            None => None,
        };
        let p_side = match (&self.side, &mla) {
            (Some(conv), Some(m)) => {
                let e = conv.forward(&m.fused)?;
                let s = e.shape().to_vec();
                Some(e.reshape(&[s[0], s[1], s[2] * s[3]])?.mean_axis(2, false)?)
            }
            _ => None,
        };
        Ok(Trace {
            image_levels,
            fused_levels,
            mla,
            output: TrainOutput {
                p_vit,
                triple,
                p_side,
            },
        })
    }

    /// Training-mode pass. Dropout is active only when `rng` is given.
    pub fn forward_train(&self, x: &Tensor, rng: Option<&mut dyn RngCore>) -> Result<TrainOutput> {
        Ok(self.run_train(x, rng)?.output)
    }

    /// Training-mode pass keeping every intermediate, without dropout.
    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.run_train(x, None)
    }

    /// Classifier logits only; the cascade and batch heads never run, so
    /// each sample's logits depend on that sample alone.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        no_grad(|| {
            let (_, s) = self.fused(x)?;
            self.classify(&s, None)
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, rng: Option<&mut dyn RngCore>) -> Result<Output> {
        match mode {
            Mode::Train => Ok(Output::Train(self.forward_train(x, rng)?)),
            Mode::Infer => Ok(Output::Infer(self.infer(x)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            image_size: 8,
            level_channels: [4, 4, 8],
            level_sizes: [4, 2, 1],
            norm_groups: 2,
            vit_dim: 8,
            vit_depth: 1,
            ..ModelConfig::default()
        }
    }

    fn images(b: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[b, 3, size, size], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn default_and_compact_configs_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::compact().validate().unwrap();
        assert_eq!(ModelConfig::default().stem_depth().unwrap(), 1);
        assert_eq!(tiny().stem_depth().unwrap(), 0);
        let bad = ModelConfig {
            level_sizes: [16, 6, 4],
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            vit_dim: 30,
            vit_heads: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backbone_levels_match_config() {
        let cfg = ModelConfig::compact();
        let model = Btn::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let levels = model
            .backbone_forward(&images(2, 64, 2), Branch::Landmark)
            .unwrap();
        for (l, t) in levels.levels().iter().enumerate() {
            let (c, h) = (cfg.level_channels[l], cfg.level_sizes[l]);
            assert_eq!(t.shape(), &[2, c, h, h]);
        }
        assert!(model.backbone_forward(&images(1, 32, 3), Branch::Image).is_err());
    }

    #[test]
    fn landmark_branch_is_frozen() {
        let model = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for p in model.params().iter() {
            assert_eq!(p.trainable(), !p.name().starts_with("landmark."), "{}", p.name());
        }
        let thawed = ModelConfig {
            landmark_branch_frozen: false,
            ..tiny()
        };
        let model = Btn::new(&thawed, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(model.params().iter().all(|p| p.trainable()));
    }

    #[test]
    fn infer_equals_train_classifier() {
        let model = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = images(3, 8, 6);
        let train = model.forward_train(&x, None).unwrap();
        let infer = model.infer(&x).unwrap();
        assert_eq!(train.p_vit.data(), infer.data());
        assert!(train.triple.is_some() && train.p_side.is_none());
    }

    #[test]
    fn single_sample_doubles_logits() {
        let model = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let out = model.forward_train(&images(1, 8, 8), None).unwrap();
        let t = out.triple.unwrap();
        for (bt, v) in t.p_bt().data().iter().zip(t.p_vit().data()) {
            assert_eq!(*bt, 2.0 * v);
        }
    }

    #[test]
    fn loss_arithmetic() {
        // logits whose cross-entropies are known: uniform gives ln N
        let uniform = Tensor::zeros(&[2, 3]);
        let t = PredictionTriple::new(uniform.clone(), uniform).unwrap();
        let w = LossWeights::default();
        let l = loss(&t, &[0, 2], &w).unwrap().item().unwrap();
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12);
        let only_vit = LossWeights {
            bt_term: false,
            cba_term: false,
            ..w
        };
        assert!((loss(&t, &[0, 2], &only_vit).unwrap().item().unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!(loss(&t, &[3, 0], &w).is_err());
        let negative = LossWeights { lambda: -1.0, ..w };
        assert!(loss(&t, &[0, 0], &negative).is_err());
    }

    #[test]
    fn variants_share_leading_parameters() {
        let full = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let base_cfg = ModelConfig {
            use_mla: false,
            use_bt: false,
            ..tiny()
        };
        let base = Btn::new(&base_cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for p in base.params().iter() {
            assert_eq!(full.params().get(p.name()).unwrap().to_vec(), p.to_vec());
        }
        let x = images(2, 8, 10);
        let out = base.forward_train(&x, None).unwrap();
        assert!(out.triple.is_none() && out.p_side.is_none());
        assert_eq!(out.p_vit.data(), full.infer(&x).unwrap().data());

        let mla_only = ModelConfig {
            use_bt: false,
            ..tiny()
        };
        let m = Btn::new(&mla_only, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let out = m.forward_train(&x, None).unwrap();
        assert_eq!(out.p_side.as_ref().unwrap().shape(), &[2, 3]);
        let bt_only = ModelConfig {
            use_mla: false,
            ..tiny()
        };
        let m = Btn::new(&bt_only, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(m.forward_train(&x, None).unwrap().triple.is_some());
    }

    #[test]
    fn landmark_weights_load_from_checkpoint() {
        let donor = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let model = Btn::new(&tiny(), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        model
            .load_landmark(&Checkpoint::from_params(donor.params()))
            .unwrap();
        for p in model.params().iter().filter(|p| p.name().ends_with("weight")) {
            let same = donor.params().get(p.name()).unwrap().to_vec() == p.to_vec();
            assert_eq!(same, p.name().starts_with("landmark."), "{}", p.name());
        }
        assert!(model.load_landmark(&Checkpoint::new()).is_err());
    }
}
