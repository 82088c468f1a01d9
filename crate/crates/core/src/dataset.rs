//! Dataset directories: one 8-bit PPM/PGM per sample, `labels.csv`
//! (`filename,label`) and optionally `samples.csv` with the true label and
//! corruption tags of synthetic data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{BtnError, Result};
use crate::pnm;

pub const LABELS_FILE: &str = "labels.csv";
pub const SAMPLES_FILE: &str = "samples.csv";

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    filename: String,
    label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    filename: String,
    true_label: usize,
    observed_label: usize,
    occluded: bool,
    blurred: bool,
    label_flipped: bool,
}

/// Fails when `dir` exists and holds anything, unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| BtnError::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(BtnError::data(format!(
                "{} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| BtnError::io(dir, e))
}

fn file_name(index: usize, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("{index:05}.{ext}")
}

/// Writes images, `labels.csv` and `samples.csv`; returns the written file
/// names relative to `dir`.
pub fn write_dataset(dir: &Path, samples: &[SampleRecord]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| BtnError::io(dir, e))?;
    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    let mut meta = csv::Writer::from_path(dir.join(SAMPLES_FILE))?;
    let mut written = Vec::with_capacity(samples.len() + 2);
    for (i, s) in samples.iter().enumerate() {
        let name = file_name(i, s.image.channels);
        pnm::write(&dir.join(&name), &s.image)?;
        labels.serialize(LabelRow {
            filename: name.clone(),
            label: s.observed_label,
        })?;
        meta.serialize(SampleRow {
            filename: name.clone(),
            true_label: s.true_label,
            observed_label: s.observed_label,
            occluded: s.occluded,
            blurred: s.blurred,
            label_flipped: s.label_flipped,
        })?;
        written.push(name);
    }
    labels
        .flush()
        .map_err(|e| BtnError::io(dir.join(LABELS_FILE), e))?;
    meta.flush()
        .map_err(|e| BtnError::io(dir.join(SAMPLES_FILE), e))?;
    written.push(LABELS_FILE.into());
    written.push(SAMPLES_FILE.into());
    Ok(written)
}

/// Loads a dataset directory, converting grey images to `channels`.
/// Without `samples.csv` the observed label is taken as the truth.
pub fn read_dataset(dir: &Path, channels: usize) -> Result<Vec<SampleRecord>> {
    let labels_path = dir.join(LABELS_FILE);
    if !labels_path.exists() {
        return Err(BtnError::data(format!("{} not found", labels_path.display())));
    }
    let rows: Vec<LabelRow> = csv::Reader::from_path(&labels_path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let meta_path: PathBuf = dir.join(SAMPLES_FILE);
    let meta: Option<Vec<SampleRow>> = if meta_path.exists() {
        Some(
            csv::Reader::from_path(&meta_path)?
                .deserialize()
                .collect::<std::result::Result<_, _>>()?,
        )
    } else {
        None
    };
    if let Some(m) = &meta {
        if m.len() != rows.len() {
            return Err(BtnError::data(format!(
                "{} lists {} samples but {} lists {}",
                SAMPLES_FILE,
                m.len(),
                LABELS_FILE,
                rows.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let image = pnm::read(&dir.join(&row.filename))?.to_channels(channels)?;
        let record = match meta.as_ref().map(|m| &m[i]) {
            Some(m) => {
                if m.filename != row.filename || m.observed_label != row.label {
                    return Err(BtnError::data(format!(
                        "{} row {i} disagrees with {}",
                        SAMPLES_FILE, LABELS_FILE
                    )));
                }
                SampleRecord {
                    image,
                    true_label: m.true_label,
                    observed_label: row.label,
                    occluded: m.occluded,
                    blurred: m.blurred,
                    label_flipped: m.label_flipped,
                }
            }
            None => SampleRecord {
                image,
                true_label: row.label,
                observed_label: row.label,
                occluded: false,
                blurred: false,
                label_flipped: false,
            },
        };
        out.push(record);
    }
    Ok(out)
}
