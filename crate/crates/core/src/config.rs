//! Run configuration: `model`, `train` and `data` sections serialised as
//! JSON, with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::data::Corruption;
use crate::error::{BtnError, Result};
use crate::model::{LossWeights, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Radius of the sharpness-aware perturbation; 0 gives plain Adam
    /// updates at twice the cost.
    pub sam_rho: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Per-epoch learning-rate decay factor.
    pub lr_gamma: f64,
    pub flip_p: f64,
    pub erase_p: f64,
    pub erase_scale: (f64, f64),
    pub erase_ratio: (f64, f64),
    /// Symmetric label noise injected into synthetic training data.
    pub noise_rate: f64,
    pub use_imbalanced_sampler: bool,
    pub lambda: f64,
    pub bt_loss: bool,
    pub cba_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            eval_batch_size: 64,
            epochs: 30,
            seed: 0,
            sam_rho: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_gamma: 0.995,
            flip_p: 0.5,
            erase_p: 0.5,
            erase_scale: (0.02, 0.1),
            erase_ratio: (0.3, 3.3),
            noise_rate: 0.0,
            use_imbalanced_sampler: false,
            lambda: 2.0,
            bt_loss: true,
            cba_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_p: self.flip_p,
            erase_p: self.erase_p,
            erase_scale: self.erase_scale,
            erase_ratio: self.erase_ratio,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            bt_term: self.bt_loss,
            cba_term: self.cba_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(BtnError::config(
                "train.batch_size and train.eval_batch_size must be >= 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(BtnError::config(format!("train.lr {} must be positive", self.lr)));
        }
        if !(self.sam_rho >= 0.0 && self.sam_rho.is_finite()) {
            return Err(BtnError::config("train.sam_rho must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(BtnError::config("adam betas must lie in [0, 1)"));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(BtnError::config("train.lr_gamma must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(BtnError::config("train.noise_rate must lie in [0, 1)"));
        }
        self.augment().validate()?;
        self.loss_weights().validate()
    }
}

/// Where the data comes from. Directories take precedence; otherwise a
/// synthetic training set (with `train.noise_rate` label noise and the
/// corruptions below) and a clean synthetic validation set are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    /// Seed of the synthetic data; `train.seed` when absent.
    pub seed: Option<u64>,
    pub occlusion_p: f64,
    pub blur_p: f64,
    pub pixel_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_dir: None,
            val_dir: None,
            n_train: 600,
            n_val: 300,
            seed: None,
            occlusion_p: 0.0,
            blur_p: 0.0,
            pixel_noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train_corruption().validate()?;
        if self.data.train_dir.is_none() && self.data.n_train == 0 {
            return Err(BtnError::config("data.n_train must be positive"));
        }
        if self.data.val_dir.is_none() && self.data.n_val == 0 {
            return Err(BtnError::config("data.n_val must be positive"));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.train.seed)
    }

    pub fn train_corruption(&self) -> Corruption {
        Corruption {
            noise_rate: self.train.noise_rate,
            occlusion_p: self.data.occlusion_p,
            blur_p: self.data.blur_p,
            pixel_noise: self.data.pixel_noise,
        }
    }

    pub fn val_corruption(&self) -> Corruption {
        Corruption {
            pixel_noise: self.data.pixel_noise,
            ..Corruption::default()
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| BtnError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| BtnError::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| BtnError::config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Sets `key` (dotted, e.g. `train.lr`) to `value`, parsed as JSON when
    /// possible and as a string otherwise. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| BtnError::config(format!("unknown config key `{key}`")))?;
        }
        *node = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(tree).map_err(|e| BtnError::config(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order, then validates.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<RunConfig> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| BtnError::config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()?;
        Ok(self)
    }
}
