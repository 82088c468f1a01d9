//! Images, labelled samples and the synthetic pattern dataset.

use std::f64::consts::PI;

use btn_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BtnError, Result};
use crate::rng::{derive, Stream};

/// Planar `[C, H, W]` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(BtnError::data(format!(
                "{} values cannot form a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Image {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Rounds every value to the nearest of 256 levels in `[0, 1]`.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Repeats a single channel `channels` times.
    pub fn to_channels(&self, channels: usize) -> Result<Image> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(BtnError::data(format!(
                "cannot convert {} channels to {channels}",
                self.channels
            )));
        }
        Ok(Image {
            channels,
            data: self.data.repeat(channels),
            ..self.clone()
        })
    }
}

/// Stacks images into `[B, C, H, W]`, mapping `[0, 1]` to `[-1, 1]`.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| BtnError::data("empty batch"))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if (img.channels, img.height, img.width) != (first.channels, first.height, first.width) {
            return Err(BtnError::data("images in a batch differ in size"));
        }
        data.extend(img.data.iter().map(|v| 2.0 * v - 1.0));
    }
    Ok(Tensor::new(
        data,
        &[images.len(), first.channels, first.height, first.width],
    )?)
}

/// One labelled image and the corruptions applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub image: Image,
    pub true_label: usize,
    /// Label used for training; differs from `true_label` only when
    /// `label_flipped`.
    pub observed_label: usize,
    pub occluded: bool,
    pub blurred: bool,
    pub label_flipped: bool,
}

/// Corruptions injected by the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Corruption {
    /// Probability of replacing the label with a different class, chosen
    /// uniformly.
    pub noise_rate: f64,
    pub occlusion_p: f64,
    pub blur_p: f64,
    /// Standard deviation of additive pixel noise.
    pub pixel_noise: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            noise_rate: 0.0,
            occlusion_p: 0.0,
            blur_p: 0.0,
            pixel_noise: 0.05,
        }
    }
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, hi_open: bool| {
            let ok = v >= 0.0 && if hi_open { v < 1.0 } else { v <= 1.0 };
            if ok {
                Ok(())
            } else {
                Err(BtnError::config(format!("{name} {v} out of range")))
            }
        };
        unit("noise_rate", self.noise_rate, true)?;
        unit("occlusion_p", self.occlusion_p, false)?;
        unit("blur_p", self.blur_p, false)?;
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return Err(BtnError::config("pixel_noise must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Centres (as fractions of the side) and orientations of the three
/// oriented blobs for `class`. The left/right pair mirror each other, so a
/// horizontal flip preserves the class.
fn blob_layout(class: usize, num_classes: usize) -> [(f64, f64, f64); 3] {
    let theta = 0.5 * PI * class as f64 / num_classes as f64;
    let mouth = if class.is_multiple_of(2) { 0.5 * PI } else { 0.0 };
    [(0.3, 0.35, theta), (0.7, 0.35, PI - theta), (0.5, 0.72, mouth)]
}

/// Grey-level rendering of one class pattern on a mid-grey background.
fn render(class: usize, num_classes: usize, size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let s = size as f64;
    let jitter = 0.02 * s;
    let (dx, dy) = (rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter));
    let amplitude = rng.gen_range(0.7..1.0);
    let sigma = 0.11 * s;
    let wavelength = 0.15 * s;
    let mut out = vec![0.5; size * size];
    for (cx, cy, theta) in blob_layout(class, num_classes) {
        let (cx, cy) = (cx * s + dx, cy * s + dy);
        let (kx, ky) = (theta.cos(), theta.sin());
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let envelope = (-(px * px + py * py) / (2.0 * sigma * sigma)).exp();
                let wave = (2.0 * PI * (px * kx + py * ky) / wavelength).cos();
                out[y * size + x] += 0.4 * amplitude * envelope * wave;
            }
        }
    }
    out
}

/// Separable Gaussian blur of one plane with clamped borders.
fn blur_plane(plane: &mut [f64], size: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let at = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * plane[y * size + at(x as isize + k as isize - radius)])
                .sum::<f64>()
                / total;
        }
    }
    for y in 0..size {
        for x in 0..size {
            plane[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[at(y as isize + k as isize - radius) * size + x])
                .sum::<f64>()
                / total;
        }
    }
}

/// Per-channel gain applied to the grey pattern.
const CHANNEL_GAIN: [f64; 3] = [1.0, 0.9, 0.8];

/// One sample drawn from its own generator stream `(seed, index)`.
pub fn synth_sample(
    index: u64,
    num_classes: usize,
    size: usize,
    corruption: &Corruption,
    seed: u64,
) -> SampleRecord {
    let mut rng = derive(seed, Stream::Sample, index);
    let true_label = rng.gen_range(0..num_classes);
    let mut grey = render(true_label, num_classes, size, &mut rng);

    let blurred = rng.gen_bool(corruption.blur_p);
    if blurred {
        blur_plane(&mut grey, size, 1.5);
    }
    let occluded = rng.gen_bool(corruption.occlusion_p);
    if occluded {
        let frac = rng.gen_range(0.15..0.3);
        let aspect: f64 = rng.gen_range(0.5..2.0);
        let area = frac * (size * size) as f64;
        let h = ((area * aspect).sqrt().round() as usize).clamp(1, size);
        let w = ((area / aspect).sqrt().round() as usize).clamp(1, size);
        let top = rng.gen_range(0..=size - h);
        let left = rng.gen_range(0..=size - w);
        let fill = rng.gen_range(0.0..0.3);
        for y in top..top + h {
            grey[y * size + left..y * size + left + w].fill(fill);
        }
    }
    let noise = Normal::new(0.0, corruption.pixel_noise.max(f64::MIN_POSITIVE)).unwrap();
    let mut data = Vec::with_capacity(3 * size * size);
    for gain in CHANNEL_GAIN {
        data.extend(grey.iter().map(|v| 0.5 + gain * (v - 0.5)));
    }
    if corruption.pixel_noise > 0.0 {
        data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let mut image = Image {
        channels: 3,
        height: size,
        width: size,
        data,
    };
    image.quantize();

    let label_flipped = num_classes > 1 && rng.gen_bool(corruption.noise_rate);
    let observed_label = if label_flipped {
        (true_label + rng.gen_range(1..num_classes)) % num_classes
    } else {
        true_label
    };
    SampleRecord {
        image,
        true_label,
        observed_label,
        occluded,
        blurred,
        label_flipped,
    }
}

/// `n` samples of `num_classes` oriented-blob patterns at `size x size`,
/// identical for identical arguments.
pub fn synth_dataset(
    n: usize,
    num_classes: usize,
    size: usize,
    corruption: &Corruption,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    corruption.validate()?;
    if num_classes == 0 || size < 8 {
        return Err(BtnError::config(
            "need at least one class and images of side >= 8",
        ));
    }
    Ok((0..n as u64)
        .map(|i| synth_sample(i, num_classes, size, corruption, seed))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_labels_without_noise() {
        let data = synth_dataset(200, 3, 16, &Corruption::default(), 1).unwrap();
        assert!(data
            .iter()
            .all(|s| s.observed_label == s.true_label && !s.label_flipped));
        assert!(data
            .iter()
            .all(|s| s.image.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn flipped_fraction_matches_rate() {
        let cfg = Corruption {
            noise_rate: 0.2,
            pixel_noise: 0.0,
            ..Corruption::default()
        };
        let data = synth_dataset(10_000, 3, 8, &cfg, 2).unwrap();
        let flipped = data.iter().filter(|s| s.label_flipped).count() as f64 / 1e4;
        assert!((flipped - 0.2).abs() <= 0.01, "{flipped}");
        for s in &data {
            assert_eq!(s.label_flipped, s.observed_label != s.true_label);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = Corruption {
            occlusion_p: 0.5,
            blur_p: 0.5,
            noise_rate: 0.3,
            ..Corruption::default()
        };
        let a = synth_dataset(20, 4, 16, &cfg, 3).unwrap();
        assert_eq!(a, synth_dataset(20, 4, 16, &cfg, 3).unwrap());
        assert_ne!(a, synth_dataset(20, 4, 16, &cfg, 4).unwrap());
        assert!(a.iter().any(|s| s.occluded) && a.iter().any(|s| s.blurred));
    }

    #[test]
    fn images_are_eight_bit() {
        let s = synth_sample(0, 3, 16, &Corruption::default(), 5);
        for v in &s.image.data {
            assert!(((v * 255.0).round() - v * 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_keeps_constant_planes() {
        let mut plane = vec![0.25; 36];
        blur_plane(&mut plane, 6, 1.5);
        assert!(plane.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn batch_tensor_layout() {
        let a = Image::filled(3, 2, 2, 1.0);
        let b = Image::filled(3, 2, 2, 0.0);
        let t = batch_tensor(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2, 2]);
        assert!(t.data()[..12].iter().all(|v| *v == 1.0));
        assert!(t.data()[12..].iter().all(|v| *v == -1.0));
        assert!(batch_tensor(&[&a, &Image::filled(1, 2, 2, 0.0)]).is_err());
    }

    #[test]
    fn rejects_bad_corruption() {
        let cfg = Corruption {
            noise_rate: 1.0,
            ..Corruption::default()
        };
        assert!(synth_dataset(1, 3, 16, &cfg, 0).is_err());
    }
}
