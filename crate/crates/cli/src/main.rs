//! `btn`: generate synthetic data, train, evaluate, run ablations and
//! inspect trained models.
//!
//! Outputs default to subdirectories of `$BTN_OUTPUT_ROOT` (or `runs`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use btn_core::ablation::{run_ablation, AblationAxis};
use btn_core::config::RunConfig;
use btn_core::data::{synth_dataset, Corruption, SampleRecord};
use btn_core::dataset::{prepare_output_dir, read_dataset, write_dataset};
use btn_core::inspect::{inspect, InspectOptions};
use btn_core::manifest::Manifest;
use btn_core::model::Btn;
use btn_core::train::{evaluate, load_data, Trainer, CONFIG_FILE, LAST_CKPT};
use btn_tensor::Checkpoint;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OUTPUT_ROOT_ENV: &str = "BTN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "btn", version, about = "Batch transformer image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image dataset with optional label noise.
    GenData(GenData),
    /// Train a model; writes checkpoints, metrics.csv and a manifest.
    Train(Train),
    /// Score a checkpoint on a dataset in inference mode.
    Evaluate(Evaluate),
    /// Sweep one configuration axis over several seeds.
    Ablate(Ablate),
    /// Write attention heatmaps, embeddings and per-head predictions.
    Inspect(Inspect),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[String]) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let all: Vec<&String> = self.overrides.iter().chain(extra).collect();
        Ok(base.with_overrides(&all)?)
    }
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Fraction of labels flipped to a different class.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    occlusion: f64,
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    /// Standard deviation of additive pixel noise.
    #[arg(long, default_value_t = 0.05)]
    pixel_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weight of the batch-head loss terms (`train.lambda`).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the run in `--out` from its last checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; the checkpoint's validation set when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    axis: AblationAxis,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Inspect {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; the checkpoint's validation set when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples that get heatmaps.
    #[arg(long, default_value_t = 8)]
    heatmaps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn or_default(out: &Option<PathBuf>, name: impl AsRef<Path>) -> PathBuf {
    out.clone().unwrap_or_else(|| output_root().join(name))
}

/// The model stored in a checkpoint written by `train`, with its config.
fn load_model(path: &Path) -> Result<(Btn, RunConfig)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    let stored = ckpt
        .metadata
        .get("config")
        .cloned()
        .with_context(|| format!("{} has no stored config", path.display()))?;
    let mut cfg: RunConfig = serde_json::from_value(stored)?;
    // the weights come from the checkpoint, not from a landmark file
    cfg.model.landmark_checkpoint = None;
    let model = Btn::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    ckpt.restore_params(model.params())?;
    Ok((model, cfg))
}

fn samples_for(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<Vec<SampleRecord>> {
    Ok(match data {
        Some(dir) => read_dataset(dir, cfg.model.in_channels)?,
        None => load_data(cfg)?.1,
    })
}

fn gen_data(a: &GenData) -> Result<()> {
    let out = or_default(&a.out, "data");
    let corruption = Corruption {
        noise_rate: a.noise,
        occlusion_p: a.occlusion,
        blur_p: a.blur,
        pixel_noise: a.pixel_noise,
    };
    let samples = synth_dataset(a.n, a.classes, a.size, &corruption, a.seed)?;
    prepare_output_dir(&out, a.force)?;
    let files = write_dataset(&out, &samples)?;
    let config = serde_json::json!({
        "n": a.n, "classes": a.classes, "size": a.size, "corruption": corruption,
    });
    Manifest::new("gen-data", a.seed, config, &out, &files)?.write(&out)?;
    let flipped = samples.iter().filter(|s| s.label_flipped).count();
    println!(
        "wrote {} samples ({flipped} flipped labels) to {}",
        samples.len(),
        out.display()
    );
    Ok(())
}

fn train(a: &Train) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(l) = a.lambda {
        extra.push(format!("train.lambda={l}"));
    }
    if let Some(e) = a.epochs {
        extra.push(format!("train.epochs={e}"));
    }
    if let Some(s) = a.seed {
        extra.push(format!("train.seed={s}"));
    }
    let out = match (&a.out, a.resume) {
        (Some(p), _) => p.clone(),
        (None, true) => bail!("--resume needs --out"),
        (None, false) => PathBuf::new(),
    };
    let mut trainer = if a.resume {
        // without --config, continue under the run's own configuration
        let cfg = match &a.cfg.config {
            Some(_) => a.cfg.resolve(&extra)?,
            None => {
                let stored = RunConfig::load(&out.join(CONFIG_FILE)).or_else(|_| {
                    let ckpt = Checkpoint::load(out.join(LAST_CKPT))?;
                    anyhow::Ok(serde_json::from_value(ckpt.metadata["config"].clone())?)
                })?;
                let all: Vec<&String> = a.cfg.overrides.iter().chain(&extra).collect();
                stored.with_overrides(&all)?
            }
        };
        Trainer::resume(cfg, &out)?
    } else {
        Trainer::from_config(a.cfg.resolve(&extra)?)?
    };
    let out = if a.out.is_some() {
        out
    } else {
        output_root().join(format!("train-seed{}", trainer.config().train.seed))
    };
    let start = trainer.epoch();
    let summary = trainer.run(Some(&out))?;
    for r in summary.history.iter().filter(|r| r.epoch > start) {
        println!(
            "epoch {:>3} {:<5} loss {:.4} acc {:.4} mean acc {:.4}",
            r.epoch, r.split, r.loss, r.overall_acc, r.mean_acc
        );
    }
    match (summary.best_epoch, summary.best_mean_acc) {
        (Some(e), Some(acc)) => println!(
            "best val mean acc {acc:.4} at epoch {e}; artifacts in {}",
            out.display()
        ),
        _ => println!("no epochs run; artifacts in {}", out.display()),
    }
    Ok(())
}

fn evaluate_cmd(a: &Evaluate) -> Result<()> {
    if a.batch_size == 0 {
        bail!("--batch-size must be positive");
    }
    let (model, cfg) = load_model(&a.checkpoint)?;
    let samples = samples_for(&cfg, &a.data)?;
    let (m, loss) = evaluate(&model, &samples, a.batch_size)?;
    let report = serde_json::json!({
        "samples": samples.len(),
        "loss": loss,
        "overall_acc": m.overall_acc,
        "mean_acc": m.mean_acc,
        "per_class_acc": m.per_class_acc,
        "confusion": m.confusion,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn ablate(a: &Ablate) -> Result<()> {
    if a.seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    let base = a.cfg.resolve(&[])?;
    let out = or_default(&a.out, format!("ablate-{}", a.axis));
    let report = run_ablation(&base, a.axis, &a.seeds, Some(&out))?;
    println!(
        "{:<10} {:>6} {:>12} {:>12}",
        "variant", "seeds", "median acc", "median mAcc"
    );
    for r in &report.rows {
        println!(
            "{:<10} {:>6} {:>12.4} {:>12.4}",
            r.variant, r.seeds, r.median_overall_acc, r.median_mean_acc
        );
    }
    println!("results in {}", out.display());
    Ok(())
}

fn inspect_cmd(a: &Inspect) -> Result<()> {
    if a.batch_size == 0 {
        bail!("--batch-size must be positive");
    }
    let (model, cfg) = load_model(&a.checkpoint)?;
    let samples = samples_for(&cfg, &a.data)?;
    let out = or_default(&a.out, "inspect");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let opts = InspectOptions {
        batch_size: a.batch_size,
        heatmap_samples: a.heatmaps,
    };
    let files = inspect(&model, &samples, &out, opts)?;
    let config = serde_json::to_value(&cfg)?;
    Manifest::new("inspect", cfg.train.seed, config, &out, &files)?.write(&out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Inspect(a) => inspect_cmd(&a),
    }
}
