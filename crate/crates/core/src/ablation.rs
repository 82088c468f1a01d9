//! Variant sweeps: every variant of an axis trains on the same seeds and the
//! same data, and is scored by its final-epoch validation metrics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{BtnError, Result};
use crate::manifest::Manifest;
use crate::train::{load_data, Trainer};

pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Which modules are built: neither, cascade fusion, batch transformer, both.
    Components,
    /// Which auxiliary loss terms are on, with the full model.
    Losses,
    /// Weight on the classifier's cross-entropy.
    Lambda,
    BatchSize,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::Components,
        AblationAxis::Losses,
        AblationAxis::Lambda,
        AblationAxis::BatchSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Components => "components",
            AblationAxis::Losses => "losses",
            AblationAxis::Lambda => "lambda",
            AblationAxis::BatchSize => "batch_size",
        }
    }

    /// Variant names in sweep order.
    pub fn variants(self) -> Vec<String> {
        let names: &[&str] = match self {
            AblationAxis::Components => &["baseline", "mla", "bt", "mla_bt"],
            AblationAxis::Losses => &["vit", "vit_bt", "vit_cba", "full"],
            AblationAxis::Lambda => &["1.0", "1.5", "2.0", "2.5", "3.0"],
            AblationAxis::BatchSize => &["8", "16", "32", "64"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with `variant` applied. Every other field is left alone, so
    /// the variants of one axis differ in exactly the swept setting.
    pub fn apply(self, base: &RunConfig, variant: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let unknown = || BtnError::config(format!("unknown {} variant `{variant}`", self.name()));
        match self {
            AblationAxis::Components => {
                let (mla, bt) = match variant {
                    "baseline" => (false, false),
                    "mla" => (true, false),
                    "bt" => (false, true),
                    "mla_bt" => (true, true),
                    _ => return Err(unknown()),
                };
                cfg.model.use_mla = mla;
                cfg.model.use_bt = bt;
            }
            AblationAxis::Losses => {
                let (bt, cba) = match variant {
                    "vit" => (false, false),
                    "vit_bt" => (true, false),
                    "vit_cba" => (false, true),
                    "full" => (true, true),
                    _ => return Err(unknown()),
                };
                cfg.model.use_mla = true;
                cfg.model.use_bt = true;
                cfg.train.bt_loss = bt;
                cfg.train.cba_loss = cba;
            }
            AblationAxis::Lambda => {
                cfg.train.lambda = variant.parse().map_err(|_| unknown())?;
            }
            AblationAxis::BatchSize => {
                cfg.train.batch_size = variant.parse().map_err(|_| unknown())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = BtnError;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| BtnError::config(format!("unknown ablation axis `{s}`")))
    }
}

/// Final-epoch validation scores of one (variant, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub overall_acc: f64,
    pub mean_acc: f64,
}

/// Medians over seeds for one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: usize,
    pub median_overall_acc: f64,
    pub median_mean_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn run_dir(out: &Path, variant: &str, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{variant}-seed{seed}"))
}

/// Trains every variant of `axis` for each seed. The seed sets both the
/// data and the initialisation, so for a given seed all variants see
/// identical samples. Per-run artifacts go to `out/runs/<variant>-seed<k>`.
pub fn run_ablation(
    base: &RunConfig,
    axis: AblationAxis,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<AblationReport> {
    run_variants(base, axis, &axis.variants(), seeds, out)
}

/// [`run_ablation`] restricted to the listed variants of `axis`.
pub fn run_variants<S: AsRef<str>>(
    base: &RunConfig,
    axis: AblationAxis,
    variants: &[S],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<AblationReport> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(BtnError::config(
            "ablation needs at least one seed and one variant",
        ));
    }
    let variants: Vec<String> = variants.iter().map(|v| v.as_ref().to_string()).collect();
    let configs: Vec<RunConfig> = variants
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        let mut seeded = base.clone();
        seeded.train.seed = seed;
        seeded.data.seed = Some(seed);
        let (train, val) = load_data(&seeded)?;
        for (variant, cfg) in variants.iter().zip(&configs) {
            let mut cfg = cfg.clone();
            cfg.train.seed = seed;
            cfg.data.seed = Some(seed);
            let mut trainer = Trainer::new(cfg, train.clone(), val.clone())?;
            let dir = out.map(|o| run_dir(o, variant, seed));
            let summary = trainer.run(dir.as_deref())?;
            let last = summary
                .final_val
                .ok_or_else(|| BtnError::config("ablation runs need train.epochs >= 1"))?;
            runs.push(AblationRun {
                variant: variant.clone(),
                seed,
                overall_acc: last.overall_acc,
                mean_acc: last.mean_acc,
            });
        }
    }
    let rows = variants
        .iter()
        .map(|v| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| &r.variant == v).collect();
            let overall: Vec<f64> = mine.iter().map(|r| r.overall_acc).collect();
            let mean: Vec<f64> = mine.iter().map(|r| r.mean_acc).collect();
            AblationRow {
                variant: v.clone(),
                seeds: mine.len(),
                median_overall_acc: median(&overall),
                median_mean_acc: median(&mean),
            }
        })
        .collect();
    let report = AblationReport { axis, rows, runs };
    if let Some(dir) = out {
        write_report(&report, base, seeds, dir)?;
    }
    Ok(report)
}

fn write_report(report: &AblationReport, base: &RunConfig, seeds: &[u64], dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(ABLATION_FILE))?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| BtnError::io(dir.join(ABLATION_FILE), e))?;
    let mut w = csv::Writer::from_path(dir.join(ABLATION_RUNS_FILE))?;
    for run in &report.runs {
        w.serialize(run)?;
    }
    w.flush()
        .map_err(|e| BtnError::io(dir.join(ABLATION_RUNS_FILE), e))?;
    let config = serde_json::json!({
        "axis": report.axis,
        "seeds": seeds,
        "base": base,
    });
    let files = [ABLATION_FILE.to_string(), ABLATION_RUNS_FILE.to_string()];
    Manifest::new(&format!("ablate {}", report.axis), seeds[0], config, dir, &files)?.write(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[0.7]), 0.7);
    }

    #[test]
    fn axes_parse_and_apply() {
        for axis in AblationAxis::ALL {
            assert_eq!(axis.name().parse::<AblationAxis>().unwrap(), axis);
            for v in axis.variants() {
                axis.apply(&RunConfig::default(), &v).unwrap();
            }
            assert!(axis.apply(&RunConfig::default(), "nope").is_err());
        }
        assert!("colour".parse::<AblationAxis>().is_err());
        let base = RunConfig::default();
        let c = AblationAxis::Components.apply(&base, "bt").unwrap();
        assert!(!c.model.use_mla && c.model.use_bt);
        let l = AblationAxis::Losses.apply(&base, "vit_cba").unwrap();
        assert!(!l.train.bt_loss && l.train.cba_loss && l.model.use_mla && l.model.use_bt);
        assert_eq!(
            AblationAxis::Lambda.apply(&base, "2.5").unwrap().train.lambda,
            2.5
        );
        assert_eq!(
            AblationAxis::BatchSize
                .apply(&base, "16")
                .unwrap()
                .train
                .batch_size,
            16
        );
    }

    #[test]
    fn tiny_sweep_writes_one_row_per_variant() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = RunConfig {
            model: crate::model::ModelConfig {
                image_size: 8,
                level_channels: [4, 4, 8],
                level_sizes: [4, 2, 1],
                norm_groups: 2,
                vit_dim: 8,
                vit_depth: 1,
                ..Default::default()
            },
            ..RunConfig::default()
        };
        base.train.epochs = 1;
        base.train.batch_size = 4;
        base.data.n_train = 8;
        base.data.n_val = 6;
        let report = run_ablation(&base, AblationAxis::Components, &[1, 2], Some(dir.path())).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.runs.len(), 8);
        let text = std::fs::read_to_string(dir.path().join(ABLATION_FILE)).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("variant,seeds,median_overall_acc,median_mean_acc"));
        assert!(dir.path().join("runs/mla_bt-seed2/metrics.csv").exists());
        assert!(dir.path().join("manifest.json").exists());
    }
}
