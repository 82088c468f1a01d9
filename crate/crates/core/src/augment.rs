//! Training-time augmentation: horizontal flips and random erasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{BtnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub erase_p: f64,
    /// Bounds of the erased area as a fraction of the image.
    pub erase_scale: (f64, f64),
    /// Bounds of the erased rectangle's height / width.
    pub erase_ratio: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            erase_p: 0.5,
            erase_scale: (0.02, 0.1),
            erase_ratio: (0.3, 3.3),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = |v: f64| (0.0..=1.0).contains(&v);
        let (lo, hi) = self.erase_scale;
        let (rlo, rhi) = self.erase_ratio;
        if !p(self.flip_p) || !p(self.erase_p) {
            return Err(BtnError::config("augmentation probabilities must lie in [0, 1]"));
        }
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(BtnError::config(format!(
                "erase_scale ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        if !(0.0 < rlo && rlo <= rhi) {
            return Err(BtnError::config(format!(
                "erase_ratio ({rlo}, {rhi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EraseRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// What `augment` did to one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentRecord {
    pub flipped: bool,
    pub erased: Option<EraseRect>,
}

/// Mirrors the width axis.
pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    for row in out.data.chunks_mut(img.width) {
        row.reverse();
    }
    out
}

/// Samples a rectangle whose area fraction lies within `erase_scale` and
/// whose aspect lies within `erase_ratio`; `None` after ten misses.
fn sample_rect<R: Rng + ?Sized>(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut R) -> Option<EraseRect> {
    let area = (h * w) as f64;
    let (lo, hi) = cfg.erase_scale;
    let (log_lo, log_hi) = (cfg.erase_ratio.0.ln(), cfg.erase_ratio.1.ln());
    for _ in 0..10 {
        let target = area * rng.gen_range(lo..=hi);
        let aspect = rng.gen_range(log_lo..=log_hi).exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        // rounding can leave the allowed ranges; such draws are rejected
        let frac = (eh * ew) as f64 / area;
        let ratio = eh as f64 / ew as f64;
        if frac < lo || frac > hi || ratio < cfg.erase_ratio.0 || ratio > cfg.erase_ratio.1 {
            continue;
        }
        return Some(EraseRect {
            top: rng.gen_range(0..=h - eh),
            left: rng.gen_range(0..=w - ew),
            height: eh,
            width: ew,
        });
    }
    None
}

/// Random flip, then random erasing filled with per-pixel uniform noise in
/// `[0, 1]`.
pub fn augment<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> (Image, AugmentRecord) {
    let mut record = AugmentRecord::default();
    let mut out = if rng.gen_bool(cfg.flip_p) {
        record.flipped = true;
        flip_horizontal(img)
    } else {
        img.clone()
    };
    if rng.gen_bool(cfg.erase_p) {
        record.erased = sample_rect(img.height, img.width, cfg, rng);
        if let Some(r) = record.erased {
            for c in 0..img.channels {
                for y in r.top..r.top + r.height {
                    for x in r.left..r.left + r.width {
                        let i = out.index(c, y, x);
                        out.data[i] = rng.gen_range(0.0..=1.0);
                    }
                }
            }
        }
    }
    (out, record)
}
