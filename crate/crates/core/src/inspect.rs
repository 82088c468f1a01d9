//! Exports for external visualisation: per-level activation heatmaps,
//! classifier embeddings and the training-mode prediction triple.

use std::path::Path;

use btn_tensor::{no_grad, Tensor};

use crate::data::{batch_tensor, Image, SampleRecord};
use crate::error::{BtnError, Result};
use crate::model::Btn;
use crate::pnm;

pub const HEATMAP_DIR: &str = "heatmaps";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InspectOptions {
    /// Samples per forward pass. The batch heads mix samples, so the
    /// triple columns depend on this.
    pub batch_size: usize,
    /// Heatmaps are written for the first this-many samples.
    pub heatmap_samples: usize,
}

impl Default for InspectOptions {
    fn default() -> Self {
        InspectOptions {
            batch_size: 64,
            heatmap_samples: 8,
        }
    }
}

/// Mean absolute activation over channels of `[B, C, H, W]`, one greyscale
/// image per sample scaled so its maximum is 1 (all-zero maps stay zero).
pub fn activation_energy(x: &Tensor) -> Result<Vec<Image>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(BtnError::data(format!(
            "activation map must be [B, C, H, W], got {s:?}"
        )));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let data = x.data();
    (0..b)
        .map(|n| {
            let mut e = vec![0.0; hw];
            for ch in 0..c {
                let plane = &data[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                e.iter_mut()
                    .zip(plane)
                    .for_each(|(a, v)| *a += v.abs() / c as f64);
            }
            let max = e.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                e.iter_mut().for_each(|v| *v /= max);
            }
            Image::new(1, s[2], s[3], e)
        })
        .collect()
}

fn floats(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |k| format!("{prefix}_{k}"))
}

/// Files written by [`inspect`], relative to the output directory.
pub type Written = Vec<String>;

/// Writes heatmaps for the image-branch levels (`image_l*`), the fused
/// levels (`fused_l*`) and, when present, the cascade outputs, plus
/// `embeddings.csv` (inference logits and label) and `predictions.csv`
/// (training-mode triple next to the inference logits).
pub fn inspect(model: &Btn, samples: &[SampleRecord], out: &Path, opts: InspectOptions) -> Result<Written> {
    if samples.is_empty() {
        return Err(BtnError::data("nothing to inspect"));
    }
    let n = model.config().num_classes;
    let heat_dir = out.join(HEATMAP_DIR);
    std::fs::create_dir_all(&heat_dir).map_err(|e| BtnError::io(&heat_dir, e))?;
    let mut written = Vec::new();

    let emb_path = out.join(EMBEDDINGS_FILE);
    let mut emb = csv::Writer::from_path(&emb_path)?;
    emb.write_record(header("p_vit", n).chain(["label".to_string()]))?;
    let pred_path = out.join(PREDICTIONS_FILE);
    let mut pred = csv::Writer::from_path(&pred_path)?;
    pred.write_record(
        ["index".to_string(), "label".to_string()]
            .into_iter()
            .chain(header("vit", n))
            .chain(header("cba", n))
            .chain(header("bt", n))
            .chain(header("infer", n)),
    )?;

    for (chunk_idx, chunk) in samples.chunks(opts.batch_size.max(1)).enumerate() {
        let base = chunk_idx * opts.batch_size.max(1);
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let x = batch_tensor(&images)?;
        let trace = no_grad(|| model.trace(&x))?;
        let infer = model.infer(&x)?;

        let mut maps: Vec<(String, &Tensor)> = Vec::new();
        for (l, t) in trace.image_levels.levels().into_iter().enumerate() {
            maps.push((format!("image_l{}", l + 1), t));
        }
        for (l, t) in trace.fused_levels.levels().into_iter().enumerate() {
            maps.push((format!("fused_l{}", l + 1), t));
        }
        if let Some(m) = &trace.mla {
            maps.push(("cascade_mid".into(), &m.low_to_mid));
            maps.push(("cascade_top".into(), &m.fused));
        }
        for (name, t) in maps {
            for (k, img) in activation_energy(t)?.into_iter().enumerate() {
                let index = base + k;
                if index >= opts.heatmap_samples {
                    break;
                }
                let file = format!("{HEATMAP_DIR}/{index:05}_{name}.pgm");
                pnm::write(&out.join(&file), &img)?;
                written.push(file);
            }
        }

        let out_t = &trace.output;
        for (k, s) in chunk.iter().enumerate() {
            let row = |t: &Tensor| t.data()[k * n..(k + 1) * n].to_vec();
            let inf = row(&infer);
            emb.write_record(floats(&inf).chain([s.observed_label.to_string()]))?;
            let (cba, bt) = match &out_t.triple {
                Some(t) => (
                    floats(&row(t.p_cba())).collect(),
                    floats(&row(t.p_bt())).collect(),
                ),
                None => (vec![String::new(); n], vec![String::new(); n]),
            };
            pred.write_record(
                [(base + k).to_string(), s.observed_label.to_string()]
                    .into_iter()
                    .chain(floats(&row(&out_t.p_vit)))
                    .chain(cba)
                    .chain(bt)
                    .chain(floats(&inf)),
            )?;
        }
    }
    emb.flush().map_err(|e| BtnError::io(&emb_path, e))?;
    pred.flush().map_err(|e| BtnError::io(&pred_path, e))?;
    written.push(EMBEDDINGS_FILE.into());
    written.push(PREDICTIONS_FILE.into());
    Ok(written)
}
