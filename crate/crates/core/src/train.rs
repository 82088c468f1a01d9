//! The training loop: sharpness-aware Adam over augmented batches, per-epoch
//! validation, checkpoints, `metrics.csv` and resumption.

use std::path::Path;

use btn_tensor::{no_grad, Checkpoint, Param, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::augment;
use crate::config::RunConfig;
use crate::data::{batch_tensor, synth_dataset, Image, SampleRecord};
use crate::dataset::read_dataset;
use crate::error::{BtnError, Result};
use crate::manifest::Manifest;
use crate::metrics::{argmax_rows, Metrics};
use crate::model::Btn;
use crate::optim::{exp_lr, sam_step, Adam};
use crate::rng::{derive, derive2, Stream};
use crate::sampler::{shuffled, ImbalancedSampler};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const CONFIG_FILE: &str = "config.json";

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train` or `val`.
    pub split: String,
    pub loss: f64,
    pub overall_acc: f64,
    pub mean_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub epochs_completed: usize,
    pub best_epoch: Option<usize>,
    pub best_mean_acc: Option<f64>,
    pub final_val: Option<Metrics>,
    pub history: Vec<EpochRecord>,
}

/// Training and validation sets as the configuration describes them.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let m = &cfg.model;
    let seed = cfg.data_seed();
    let train = match &cfg.data.train_dir {
        Some(dir) => read_dataset(dir, m.in_channels)?,
        None => synth_dataset(
            cfg.data.n_train,
            m.num_classes,
            m.image_size,
            &cfg.train_corruption(),
            seed,
        )?,
    };
    // validation draws from a stream disjoint from the training set
    let val = match &cfg.data.val_dir {
        Some(dir) => read_dataset(dir, m.in_channels)?,
        None => synth_dataset(
            cfg.data.n_val,
            m.num_classes,
            m.image_size,
            &cfg.val_corruption(),
            seed ^ 0x005e_ed0f_7a1d,
        )?,
    };
    for s in train.iter().chain(&val) {
        if s.observed_label >= m.num_classes {
            return Err(BtnError::data(format!(
                "label {} outside {} classes",
                s.observed_label, m.num_classes
            )));
        }
    }
    Ok((train, val))
}

/// Validation metrics and mean classifier cross-entropy, using inference
/// mode in batches of `batch_size`.
pub fn evaluate(model: &Btn, samples: &[SampleRecord], batch_size: usize) -> Result<(Metrics, f64)> {
    let n = model.config().num_classes;
    let mut predicted = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let y: Vec<usize> = chunk.iter().map(|s| s.observed_label).collect();
        let logits = model.infer(&batch_tensor(&images)?)?;
        loss_sum += no_grad(|| logits.cross_entropy(&y))?.item()? * chunk.len() as f64;
        predicted.extend(argmax_rows(logits.data(), n));
        labels.extend(y);
    }
    let metrics = Metrics::from_predictions(&predicted, &labels, n)?;
    Ok((metrics, loss_sum / samples.len() as f64))
}

pub struct Trainer {
    cfg: RunConfig,
    model: Btn,
    trainable: Vec<Param>,
    adam: Adam,
    train: Vec<SampleRecord>,
    val: Vec<SampleRecord>,
    epoch: usize,
    best: Option<(usize, f64)>,
    history: Vec<EpochRecord>,
    last_val: Option<Metrics>,
}

impl Trainer {
    pub fn new(cfg: RunConfig, train: Vec<SampleRecord>, val: Vec<SampleRecord>) -> Result<Trainer> {
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(BtnError::data("training and validation sets must be non-empty"));
        }
        let model = Btn::new(&cfg.model, &mut derive(cfg.train.seed, Stream::Init, 0))?;
        let trainable = model.params().trainable();
        let t = &cfg.train;
        let adam = Adam::new(&trainable, t.adam_beta1, t.adam_beta2, t.adam_eps);
        Ok(Trainer {
            cfg,
            model,
            trainable,
            adam,
            train,
            val,
            epoch: 0,
            best: None,
            history: Vec::new(),
            last_val: None,
        })
    }

    pub fn from_config(cfg: RunConfig) -> Result<Trainer> {
        let (train, val) = load_data(&cfg)?;
        Trainer::new(cfg, train, val)
    }

    pub fn model(&self) -> &Btn {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Sample order for epoch `epoch` (1-based); a trailing partial batch is
    /// dropped unless it is the only batch.
    fn batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let mut rng = derive(self.cfg.train.seed, Stream::Epoch, epoch as u64);
        let n = self.train.len();
        let order = if self.cfg.train.use_imbalanced_sampler {
            let labels: Vec<usize> = self.train.iter().map(|s| s.observed_label).collect();
            ImbalancedSampler::new(&labels)?.draw(n, &mut rng)
        } else {
            shuffled(n, &mut rng)
        };
        let bs = self.cfg.train.batch_size.min(n);
        Ok(order
            .chunks(bs)
            .filter(|c| c.len() == bs)
            .map(<[usize]>::to_vec)
            .collect())
    }

    /// Validation metrics of the latest epoch run by this trainer.
    pub fn last_val(&self) -> Option<&Metrics> {
        self.last_val.as_ref()
    }

    /// Runs one epoch of training and validation and appends both rows to
    /// the history.
    pub fn run_epoch(&mut self) -> Result<(EpochRecord, EpochRecord)> {
        let epoch = self.epoch + 1;
        let t = self.cfg.train.clone();
        let lr = exp_lr(t.lr, t.lr_gamma, epoch - 1);
        let weights = t.loss_weights();
        let aug = t.augment();
        let n = self.cfg.model.num_classes;
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let (mut predicted, mut labels) = (Vec::new(), Vec::new());
        for (b, idx) in self.batches(epoch)?.into_iter().enumerate() {
            let images: Vec<Image> = idx
                .iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mut rng = derive2(
                        t.seed,
                        Stream::Augment,
                        epoch as u64,
                        (b * t.batch_size + pos) as u64,
                    );
                    augment(&self.train[i].image, &aug, &mut rng).0
                })
                .collect();
            let x = batch_tensor(&images.iter().collect::<Vec<_>>())?;
            let y: Vec<usize> = idx.iter().map(|&i| self.train[i].observed_label).collect();
            let model = &self.model;
            let mut first: Option<Tensor> = None;
            // both phases see the same dropout masks
            let mut objective = || {
                let mut rng = derive2(t.seed, Stream::Dropout, epoch as u64, b as u64);
                let out = model.forward_train(&x, Some(&mut rng))?;
                if first.is_none() {
                    first = Some(out.p_vit.detach());
                }
                out.loss(&y, &weights)
            };
            let loss = sam_step(&self.trainable, &mut self.adam, lr, t.sam_rho, &mut objective).map_err(
                |e| match e {
                    BtnError::NonFiniteLoss { loss, .. } => BtnError::NonFiniteLoss {
                        loss,
                        context: format!("epoch {epoch} batch {b}"),
                    },
                    e => e,
                },
            )?;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            predicted.extend(argmax_rows(first.expect("objective ran").data(), n));
            labels.extend(y);
        }
        let train_m = Metrics::from_predictions(&predicted, &labels, n)?;
        let train_rec = EpochRecord {
            epoch,
            split: "train".into(),
            loss: loss_sum / seen as f64,
            overall_acc: train_m.overall_acc,
            mean_acc: train_m.mean_acc,
        };
        let (val_m, val_loss) = evaluate(&self.model, &self.val, t.eval_batch_size)?;
        let val_rec = EpochRecord {
            epoch,
            split: "val".into(),
            loss: val_loss,
            overall_acc: val_m.overall_acc,
            mean_acc: val_m.mean_acc,
        };
        self.epoch = epoch;
        self.history.push(train_rec.clone());
        self.history.push(val_rec.clone());
        self.last_val = Some(val_m);
        Ok((train_rec, val_rec))
    }

    fn metadata(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.metadata.insert("epoch".into(), json!(self.epoch));
        ckpt.metadata
            .insert("config".into(), serde_json::to_value(&self.cfg)?);
        if let Some((e, acc)) = self.best {
            ckpt.metadata.insert("best_epoch".into(), json!(e));
            ckpt.metadata.insert("best_mean_acc".into(), json!(acc));
        }
        Ok(())
    }

    /// Parameters plus optimiser state, sufficient to resume.
    pub fn resumable_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_params(self.model.params());
        self.adam.save_state(&self.trainable, &mut ckpt)?;
        self.metadata(&mut ckpt)?;
        Ok(ckpt)
    }

    pub fn model_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_params(self.model.params());
        self.metadata(&mut ckpt)?;
        Ok(ckpt)
    }

    /// Continues from `last.ckpt` and `metrics.csv` in `dir`. The stored
    /// configuration must match `cfg` in everything but `train.epochs`.
    pub fn resume(cfg: RunConfig, dir: &Path) -> Result<Trainer> {
        let ckpt = Checkpoint::load(dir.join(LAST_CKPT))?;
        let stored: RunConfig = serde_json::from_value(
            ckpt.metadata
                .get("config")
                .cloned()
                .ok_or_else(|| BtnError::config("checkpoint lacks its config"))?,
        )?;
        let mut comparable = stored.clone();
        comparable.train.epochs = cfg.train.epochs;
        if comparable != cfg {
            return Err(BtnError::config(
                "resume config differs from the checkpoint's in more than train.epochs",
            ));
        }
        let mut trainer = Trainer::from_config(cfg)?;
        ckpt.restore_params(trainer.model.params())?;
        trainer.adam.load_state(&trainer.trainable, &ckpt)?;
        let get = |k: &str| ckpt.metadata.get(k).and_then(|v| v.as_u64());
        trainer.epoch = get("epoch").ok_or_else(|| BtnError::config("checkpoint lacks epoch"))? as usize;
        trainer.best = match (
            get("best_epoch"),
            ckpt.metadata.get("best_mean_acc").and_then(|v| v.as_f64()),
        ) {
            (Some(e), Some(a)) => Some((e as usize, a)),
            _ => None,
        };
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            trainer.history = csv::Reader::from_path(&metrics)?
                .deserialize()
                .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
            trainer.history.retain(|r| r.epoch <= trainer.epoch);
        }
        Ok(trainer)
    }

    fn write_metrics(&self, dir: &Path) -> Result<()> {
        let path = dir.join(METRICS_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        for r in &self.history {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| BtnError::io(path, e))
    }

    /// Trains until `train.epochs`, writing artifacts to `out` when given:
    /// `last.ckpt` (initially and after every epoch), `best.ckpt` (highest
    /// validation mean accuracy), `metrics.csv`, `config.json` and
    /// `manifest.json`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<RunSummary> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| BtnError::io(dir, e))?;
            if self.epoch == 0 {
                self.resumable_checkpoint()?.save(dir.join(LAST_CKPT))?;
            }
        }
        while self.epoch < self.cfg.train.epochs {
            let (_, val) = self.run_epoch()?;
            let improved = self.best.is_none_or(|(_, acc)| val.mean_acc > acc);
            if improved {
                self.best = Some((self.epoch, val.mean_acc));
            }
            if let Some(dir) = out {
                if improved {
                    self.model_checkpoint()?.save(dir.join(BEST_CKPT))?;
                }
                self.resumable_checkpoint()?.save(dir.join(LAST_CKPT))?;
                self.write_metrics(dir)?;
            }
        }
        if let Some(dir) = out {
            let path = dir.join(CONFIG_FILE);
            std::fs::write(&path, self.cfg.to_json()?).map_err(|e| BtnError::io(&path, e))?;
            let files: Vec<String> = [CONFIG_FILE, LAST_CKPT, BEST_CKPT, METRICS_FILE]
                .iter()
                .filter(|f| dir.join(f).exists())
                .map(|f| f.to_string())
                .collect();
            let config = serde_json::to_value(&self.cfg)?;
            Manifest::new("train", self.cfg.train.seed, config, dir, &files)?.write(dir)?;
        }
        Ok(RunSummary {
            epochs_completed: self.epoch,
            best_epoch: self.best.map(|b| b.0),
            best_mean_acc: self.best.map(|b| b.1),
            final_val: self.last_val.clone(),
            history: self.history.clone(),
        })
    }
}
