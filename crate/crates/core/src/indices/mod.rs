//! Vegetation indices over NRGB imagery.
//!
//! Every index is a [`VegetationIndex`] strategy in the [`IndexRegistry`];
//! [`ViKind`] names the thirteen standard ones in their canonical order, which
//! is also the row/column order of correlation matrices.

mod formulas;
mod registry;

use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

pub use formulas::Ndvi;
pub use registry::{registry, IndexRegistry, RationalForm, VegetationIndex};

use crate::error::{Error, Result};
use crate::raster::NrgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViKind {
    Ndvi,
    Iavi,
    Msavi2,
    Evi,
    Vdvi,
    Wdrvi,
    Mcari,
    Gdvi,
    Savi,
    Rvi,
    Vci,
    Grvi,
    Ndgi,
}

impl ViKind {
    pub const ALL: [ViKind; 13] = [
        ViKind::Ndvi,
        ViKind::Iavi,
        ViKind::Msavi2,
        ViKind::Evi,
        ViKind::Vdvi,
        ViKind::Wdrvi,
        ViKind::Mcari,
        ViKind::Gdvi,
        ViKind::Savi,
        ViKind::Rvi,
        ViKind::Vci,
        ViKind::Grvi,
        ViKind::Ndgi,
    ];

    /// The twelve indices usable as network inputs: everything except IAVI,
    /// whose `gamma` needs per-dataset calibration.
    pub fn network_inputs() -> impl Iterator<Item = ViKind> {
        Self::ALL.into_iter().filter(|k| *k != ViKind::Iavi)
    }

    pub const fn name(self) -> &'static str {
        match self {
            ViKind::Ndvi => "ndvi",
            ViKind::Iavi => "iavi",
            ViKind::Msavi2 => "msavi2",
            ViKind::Evi => "evi",
            ViKind::Vdvi => "vdvi",
            ViKind::Wdrvi => "wdrvi",
            ViKind::Mcari => "mcari",
            ViKind::Gdvi => "gdvi",
            ViKind::Savi => "savi",
            ViKind::Rvi => "rvi",
            ViKind::Vci => "vci",
            ViKind::Grvi => "grvi",
            ViKind::Ndgi => "ndgi",
        }
    }

    pub fn position(self) -> usize {
        Self::ALL
            .iter()
            .position(|k| *k == self)
            .expect("every kind is listed")
    }
}

impl fmt::Display for ViKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_ascii_uppercase())
    }
}

impl FromStr for ViKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownName {
                name: s.to_string(),
                expected: Self::ALL.map(|k| k.name()).join(", "),
            })
    }
}

/// Free parameters of the indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViParams {
    /// IAVI blue-red correction, in `(0.65, 1.12)`.
    pub gamma: f64,
    /// SAVI soil factor, one of 0, 0.5, 1.
    pub savi_l: f64,
    /// Dataset NDVI `(min, max)` for VCI.
    pub ndvi_range: Option<(f64, f64)>,
    /// Smallest denominator magnitude.
    pub clip_eps: f64,
}

impl Default for ViParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            savi_l: 0.5,
            ndvi_range: None,
            clip_eps: 1e-6,
        }
    }
}

impl ViParams {
    pub fn with_ndvi_range(self, min: f64, max: f64) -> Self {
        Self {
            ndvi_range: Some((min, max)),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.65 && self.gamma < 1.12) {
            return Err(Error::param(format!(
                "gamma {} outside (0.65, 1.12)",
                self.gamma
            )));
        }
        if ![0.0, 0.5, 1.0].contains(&self.savi_l) {
            return Err(Error::param(format!(
                "SAVI L {} not one of 0, 0.5, 1",
                self.savi_l
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(Error::param(format!(
                "clip_eps {} must be positive",
                self.clip_eps
            )));
        }
        if let Some((lo, hi)) = self.ndvi_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::param(format!(
                    "NDVI extrema ({lo}, {hi}) not ordered"
                )));
            }
        }
        Ok(())
    }
}

/// Interval of index values considered interpretable. Metadata only; nothing is clamped to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeaningfulRange {
    pub lo: Bound<f64>,
    pub hi: Bound<f64>,
}

impl MeaningfulRange {
    pub const UNBOUNDED: Self = Self {
        lo: Bound::Unbounded,
        hi: Bound::Unbounded,
    };

    pub fn finite_lo(&self) -> Option<f64> {
        match self.lo {
            Bound::Included(v) | Bound::Excluded(v) => Some(v),
            Bound::Unbounded => None,
        }
    }

    pub fn finite_hi(&self) -> Option<f64> {
        match self.hi {
            Bound::Included(v) | Bound::Excluded(v) => Some(v),
            Bound::Unbounded => None,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let lo = match self.lo {
            Bound::Included(a) => v >= a,
            Bound::Excluded(a) => v > a,
            Bound::Unbounded => true,
        };
        let hi = match self.hi {
            Bound::Included(b) => v <= b,
            Bound::Excluded(b) => v < b,
            Bound::Unbounded => true,
        };
        lo && hi
    }
}

impl fmt::Display for MeaningfulRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lo {
            Bound::Included(v) => write!(f, "[{v}")?,
            Bound::Excluded(v) => write!(f, "({v}")?,
            Bound::Unbounded => write!(f, "(-inf")?,
        }
        match self.hi {
            Bound::Included(v) => write!(f, ", {v}]"),
            Bound::Excluded(v) => write!(f, ", {v})"),
            Bound::Unbounded => write!(f, ", inf)"),
        }
    }
}

pub fn meaningful_range(kind: ViKind) -> MeaningfulRange {
    registry()
        .get(kind)
        .expect("standard registry holds every kind")
        .meaningful_range()
}

/// One index evaluated over an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ViRaster {
    pub kind: ViKind,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ViRaster {
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(x, _)| *x)
    }
}

pub fn compute_vi(kind: ViKind, image: &NrgbImage, params: &ViParams) -> Result<ViRaster> {
    let index = registry()
        .get(kind)
        .expect("standard registry holds every kind");
    compute_with(index, image, params)
}

/// Evaluates any registered index over an image.
pub fn compute_with(
    index: &dyn VegetationIndex,
    image: &NrgbImage,
    params: &ViParams,
) -> Result<ViRaster> {
    index.check(params)?;
    let values = (0..image.len())
        .map(|i| index.evaluate(image.pixel(i), params))
        .collect();
    Ok(ViRaster {
        kind: index.kind(),
        width: image.width(),
        height: image.height(),
        values,
        valid: image.valid().to_vec(),
    })
}

/// The twelve network-input indices in canonical order.
pub fn compute_all(image: &NrgbImage, params: &ViParams) -> Result<Vec<ViRaster>> {
    ViKind::network_inputs()
        .map(|k| compute_vi(k, image, params))
        .collect()
}

/// NDVI extrema over every valid pixel of every image.
pub fn vci_stats(dataset: &[NrgbImage], params: &ViParams) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Empty("no images for NDVI statistics".into()));
    }
    params.validate()?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for img in dataset {
        for i in (0..img.len()).filter(|&i| img.valid()[i]) {
            let v = Ndvi::value(img.pixel(i), params.clip_eps);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::Empty("no valid pixels for NDVI statistics".into()));
    }
    Ok((lo, hi))
}

/// Symmetric matrix of Pearson coefficients. `None` marks pairs involving a
/// raster that is constant over the valid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub kinds: Vec<ViKind>,
    entries: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.kinds.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.kinds.len() + j]
    }

    pub fn between(&self, a: ViKind, b: ViKind) -> Option<f64> {
        let i = self.kinds.iter().position(|k| *k == a)?;
        let j = self.kinds.iter().position(|k| *k == b)?;
        self.get(i, j)
    }
}

/// Pearson correlation between pixel columns, each already restricted to valid pixels.
pub fn correlation_from_columns(
    kinds: Vec<ViKind>,
    columns: &[Vec<f64>],
) -> Result<CorrelationMatrix> {
    let k = columns.len();
    if kinds.len() != k {
        return Err(Error::shape(format!(
            "{} names for {k} columns",
            kinds.len()
        )));
    }
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension(
            "correlation columns differ in length".into(),
        ));
    }
    if n < 2 {
        return Err(Error::Empty(format!(
            "correlation needs at least 2 valid pixels, got {n}"
        )));
    }
    let centered: Vec<Option<Vec<f64>>> = columns
        .iter()
        .map(|c| {
            let (lo, hi) = c
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            if lo == hi {
                return None;
            }
            let mean = c.iter().sum::<f64>() / n as f64;
            Some(c.iter().map(|v| v - mean).collect())
        })
        .collect();
    let norms: Vec<Option<f64>> = centered
        .iter()
        .map(|c| {
            c.as_ref()
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect();

    let mut entries = vec![None; k * k];
    for i in 0..k {
        for j in i..k {
            let value = match (&centered[i], &centered[j], norms[i], norms[j]) {
                (Some(a), Some(b), Some(na), Some(nb)) => {
                    if i == j {
                        Some(1.0)
                    } else {
                        let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        Some((s / (na * nb)).clamp(-1.0, 1.0))
                    }
                }
                _ => None,
            };
            entries[i * k + j] = value;
            entries[j * k + i] = value;
        }
    }
    Ok(CorrelationMatrix { kinds, entries })
}

/// Pixel-level Pearson correlation between rasters over the pixels where `mask` is true.
pub fn correlation_matrix(rasters: &[ViRaster], mask: &[bool]) -> Result<CorrelationMatrix> {
    if let Some(r) = rasters.iter().find(|r| r.values.len() != mask.len()) {
        return Err(Error::Dimension(format!(
            "{} raster has {} pixels, mask has {}",
            r.kind,
            r.values.len(),
            mask.len()
        )));
    }
    let columns: Vec<Vec<f64>> = rasters
        .iter()
        .map(|r| {
            r.values
                .iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    correlation_from_columns(rasters.iter().map(|r| r.kind).collect(), &columns)
}
