//! Synthetic NRGB scenes with overlapping segmentation labels.
//!
//! Each scene mixes vegetation and soil spectra by a smooth vegetation-fraction
//! field, floods low areas with water and darkens blobs with cloud shadow. A
//! per-image illumination gain and pixel noise are applied on top. Labels are
//! derived from the latent (noise-free) scene:
//!
//! - weed cluster where the latent NDVI plus a smooth noise field exceeds a threshold,
//! - waterway where the water field is high,
//! - cloud shadow where the shadow field is high, added on top of the label
//!   underneath, which yields two-label pixels,
//! - background elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LabelGrid;
use crate::raster::NrgbImage;

pub const CLASS_NAMES: [&str; 4] = ["background", "weed_cluster", "waterway", "cloud_shadow"];
pub const BACKGROUND: usize = 0;
pub const WEED: usize = 1;
pub const WATER: usize = 2;
pub const SHADOW: usize = 3;

/// Reflectance endmembers in (NIR, R, G, B) order.
pub const VEGETATION: [f64; 4] = [0.50, 0.05, 0.12, 0.04];
pub const SOIL: [f64; 4] = [0.30, 0.25, 0.20, 0.14];
pub const WATER_SPECTRUM: [f64; 4] = [0.04, 0.06, 0.08, 0.10];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub images: usize,
    pub size: usize,
    pub seed: u64,
    /// Lattice spacing of the smooth fields, in pixels.
    pub feature_scale: usize,
    /// Illumination gain range per image.
    pub gain: (f64, f64),
    /// Reflectance multiplier inside cloud shadow.
    pub shadow_darkening: f64,
    /// Field level above which a pixel is water / shadow.
    pub water_level: f64,
    pub shadow_level: f64,
    /// Latent NDVI threshold for weed clusters.
    pub weed_ndvi: f64,
    /// Amplitude of the smooth noise added to latent NDVI before thresholding.
    pub label_noise: f64,
    /// Relative (multiplicative) and absolute pixel noise.
    pub relative_noise: f64,
    pub absolute_noise: f64,
    /// Probability that an image carries an invalid rectangle.
    pub invalid_probability: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 200,
            size: 64,
            seed: 0,
            feature_scale: 16,
            gain: (0.6, 1.4),
            shadow_darkening: 0.45,
            water_level: 0.72,
            shadow_level: 0.72,
            weed_ndvi: 0.5,
            label_noise: 0.1,
            relative_noise: 0.04,
            absolute_noise: 0.003,
            invalid_probability: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 || self.size < 4 || self.feature_scale == 0 {
            return Err(Error::param(
                "image count, size (>= 4) and feature scale must be positive",
            ));
        }
        let (lo, hi) = self.gain;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!("gain range ({lo}, {hi}) invalid")));
        }
        if !(self.shadow_darkening > 0.0 && self.shadow_darkening <= 1.0) {
            return Err(Error::param("shadow darkening must lie in (0, 1]"));
        }
        let probs = [self.invalid_probability];
        let nonneg = [self.label_noise, self.relative_noise, self.absolute_noise];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param(
                "noise levels must be non-negative and probabilities in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub images: Vec<NrgbImage>,
    pub labels: Vec<LabelGrid>,
}

/// Two-octave value noise in `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Vec<f64> {
    let octave = |rng: &mut ChaCha8Rng, cell: usize| {
        let cell = cell.max(1);
        let nodes = size / cell + 2;
        let lattice: Vec<f64> = (0..nodes * nodes).map(|_| rng.random::<f64>()).collect();
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            let (gy, ty) = (y / cell, smooth((y % cell) as f64 / cell as f64));
            for x in 0..size {
                let (gx, tx) = (x / cell, smooth((x % cell) as f64 / cell as f64));
                let at = |j: usize, i: usize| lattice[j * nodes + i];
                let top = at(gy, gx) * (1.0 - tx) + at(gy, gx + 1) * tx;
                let bottom = at(gy + 1, gx) * (1.0 - tx) + at(gy + 1, gx + 1) * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        out
    };
    let coarse = octave(rng, cell);
    let fine = octave(rng, cell / 2);
    coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| 0.65 * a + 0.35 * b)
        .collect()
}

fn ndvi(s: &[f64; 4]) -> f64 {
    (s[0] - s[1]) / (s[0] + s[1])
}

pub fn synth_image(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<(NrgbImage, LabelGrid)> {
    let n = spec.size;
    let len = n * n;
    let cell = spec.feature_scale;
    let veg = value_noise(rng, n, cell);
    let water = value_noise(rng, n, cell);
    let shadow = value_noise(rng, n, cell);
    let jitter = value_noise(rng, n, cell / 2);
    let gain = rng.random_range(spec.gain.0..=spec.gain.1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(len));
    let mut labels = vec![0u32; len];
    for i in 0..len {
        // stretch the field so bare soil and dense canopy both occur
        let f = ((veg[i] - 0.3) / 0.45).clamp(0.0, 1.0);
        let is_water = water[i] > spec.water_level;
        let latent: [f64; 4] = if is_water {
            WATER_SPECTRUM
        } else {
            std::array::from_fn(|c| f * VEGETATION[c] + (1.0 - f) * SOIL[c])
        };
        let in_shadow = shadow[i] > spec.shadow_level;
        let light = gain
            * if in_shadow {
                spec.shadow_darkening
            } else {
                1.0
            };
        for (c, plane) in planes.iter_mut().enumerate() {
            let v = latent[c] * light * (1.0 + spec.relative_noise * normal.sample(rng))
                + spec.absolute_noise * normal.sample(rng);
            plane.push(v.clamp(0.0, 1.0));
        }
        let base = if is_water {
            WATER
        } else if ndvi(&latent) + spec.label_noise * (2.0 * jitter[i] - 1.0) > spec.weed_ndvi {
            WEED
        } else {
            BACKGROUND
        };
        labels[i] = 1 << base;
        if in_shadow {
            labels[i] |= 1 << SHADOW;
        }
    }

    let mut valid = vec![true; len];
    if rng.random_bool(spec.invalid_probability) {
        let (w, h) = (
            rng.random_range(n / 8..=n / 3),
            rng.random_range(n / 8..=n / 3),
        );
        let (x0, y0) = (rng.random_range(0..=n - w), rng.random_range(0..=n - h));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                valid[y * n + x] = false;
                labels[y * n + x] = 0;
            }
        }
    }
    let image = NrgbImage::new(n, n, planes, valid.clone())?;
    let grid = LabelGrid::new(n, n, CLASS_NAMES.len(), labels, valid)?;
    Ok((image, grid))
}

/// Deterministic dataset for `spec.seed`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.images);
    let mut labels = Vec::with_capacity(spec.images);
    for _ in 0..spec.images {
        let (img, lab) = synth_image(spec, &mut rng)?;
        images.push(img);
        labels.push(lab);
    }
    Ok(SynthDataset { images, labels })
}
