//! The thirteen NRGB indices, each written exactly as tabulated.
//!
//! Some printed forms differ from their original literature (VCI divides by
//! `max + min`, MCARI uses an NIR-based expression); the printed forms are the
//! ones implemented.

use std::ops::Bound::{self, Excluded, Included, Unbounded};

use super::registry::{RationalForm, VegetationIndex};
use super::{MeaningfulRange, ViKind, ViParams};
use crate::diffcore::clip_denominator;
use crate::raster::Nrgb;

#[inline]
fn div(num: f64, den: f64, eps: f64) -> f64 {
    num / clip_denominator(den, eps)
}

const fn range(lo: Bound<f64>, hi: Bound<f64>) -> MeaningfulRange {
    MeaningfulRange { lo, hi }
}

pub(super) fn standard() -> Vec<Box<dyn VegetationIndex>> {
    vec![
        Box::new(Ndvi),
        Box::new(Iavi),
        Box::new(Msavi2),
        Box::new(Evi),
        Box::new(Vdvi),
        Box::new(Wdrvi),
        Box::new(Mcari),
        Box::new(Gdvi),
        Box::new(Savi),
        Box::new(Rvi),
        Box::new(Vci),
        Box::new(Grvi),
        Box::new(Ndgi),
    ]
}

pub struct Ndvi;

impl Ndvi {
    pub fn value(px: Nrgb, eps: f64) -> f64 {
        div(px.nir - px.r, px.nir + px.r, eps)
    }
}

impl VegetationIndex for Ndvi {
    fn kind(&self) -> ViKind {
        ViKind::Ndvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        Self::value(px, p.clip_eps)
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 1.0, -1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.0, 0.0],
        ))
    }
}

/// Atmospherically resistant index with blue-red correction `gamma`.
pub struct Iavi;

impl VegetationIndex for Iavi {
    fn kind(&self) -> ViKind {
        ViKind::Iavi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(-1.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        let rb = px.r - p.gamma * (px.b - px.r);
        div(px.nir - rb, px.nir + rb, p.clip_eps)
    }
    fn rational_form(&self, p: &ViParams) -> Option<RationalForm> {
        let g = p.gamma;
        Some(RationalForm::new(
            [0.0, 1.0, -(1.0 + g), 0.0, g],
            [0.0, 1.0, 1.0 + g, 0.0, -g],
        ))
    }
}

pub struct Msavi2;

impl VegetationIndex for Msavi2 {
    fn kind(&self) -> ViKind {
        ViKind::Msavi2
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, _: &ViParams) -> f64 {
        let a = 2.0 * px.nir + 1.0;
        0.5 * (a - (a * a - 8.0 * (px.nir - px.r)).max(0.0).sqrt())
    }
}

pub struct Evi;

impl VegetationIndex for Evi {
    fn kind(&self) -> ViKind {
        ViKind::Evi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Unbounded, Unbounded)
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        2.5 * div(
            px.nir - px.r,
            px.nir + 6.0 * px.r - 7.5 * px.b + 1.0,
            p.clip_eps,
        )
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 2.5, -2.5, 0.0, 0.0],
            [1.0, 1.0, 6.0, 0.0, -7.5],
        ))
    }
}

/// Visible-band difference index.
pub struct Vdvi;

impl VegetationIndex for Vdvi {
    fn kind(&self) -> ViKind {
        ViKind::Vdvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(-1.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        2.0 * div(
            2.0 * px.g - px.r - px.b,
            2.0 * px.g + px.r + px.b,
            p.clip_eps,
        )
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 0.0, -2.0, 4.0, -2.0],
            [0.0, 0.0, 1.0, 2.0, 1.0],
        ))
    }
}

pub struct Wdrvi;

impl VegetationIndex for Wdrvi {
    fn kind(&self) -> ViKind {
        ViKind::Wdrvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(-1.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        div(0.2 * px.nir - px.r, 0.2 * px.nir + px.r, p.clip_eps)
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 0.2, -1.0, 0.0, 0.0],
            [0.0, 0.2, 1.0, 0.0, 0.0],
        ))
    }
}

pub struct Mcari;

impl VegetationIndex for Mcari {
    fn kind(&self) -> ViKind {
        ViKind::Mcari
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Excluded(-1.6), Excluded(4.88))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        let num = 1.5 * (2.5 * (px.nir - px.r) - 1.3 * (px.nir - px.g));
        let a = 2.0 * px.nir + 1.0;
        let den = (a * a - (6.0 * px.nir - 5.0 * px.r) - 0.5).max(0.0).sqrt();
        div(num, den, p.clip_eps)
    }
}

/// Green difference index; affine, so its rational form has a unit denominator.
pub struct Gdvi;

impl VegetationIndex for Gdvi {
    fn kind(&self) -> ViKind {
        ViKind::Gdvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(-1.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, _: &ViParams) -> f64 {
        px.nir - px.g
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 1.0, 0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0],
        ))
    }
}

/// Soil-adjusted index with soil factor `L`.
pub struct Savi;

impl VegetationIndex for Savi {
    fn kind(&self) -> ViKind {
        ViKind::Savi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        let l = p.savi_l;
        (1.0 + l) * div(px.nir - px.r, px.nir + px.r + l, p.clip_eps)
    }
    fn rational_form(&self, p: &ViParams) -> Option<RationalForm> {
        let s = 1.0 + p.savi_l;
        Some(RationalForm::new(
            [0.0, s, -s, 0.0, 0.0],
            [p.savi_l, 1.0, 1.0, 0.0, 0.0],
        ))
    }
}

/// Ratio index, tabulated as R / NIR.
pub struct Rvi;

impl VegetationIndex for Rvi {
    fn kind(&self) -> ViKind {
        ViKind::Rvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Unbounded)
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        div(px.r, px.nir, p.clip_eps)
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
        ))
    }
}

/// Condition index relative to dataset NDVI extrema: `(ndvi - min) / (max + min)`.
pub struct Vci;

impl VegetationIndex for Vci {
    fn kind(&self) -> ViKind {
        ViKind::Vci
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Included(1.0))
    }
    fn requires_dataset_stats(&self) -> bool {
        true
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        let (lo, hi) = p.ndvi_range.expect("checked by VegetationIndex::check");
        div(Ndvi::value(px, p.clip_eps) - lo, hi + lo, p.clip_eps)
    }
}

pub struct Grvi;

impl VegetationIndex for Grvi {
    fn kind(&self) -> ViKind {
        ViKind::Grvi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(0.0), Unbounded)
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        div(px.nir, px.g, p.clip_eps)
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
        ))
    }
}

pub struct Ndgi;

impl VegetationIndex for Ndgi {
    fn kind(&self) -> ViKind {
        ViKind::Ndgi
    }
    fn meaningful_range(&self) -> MeaningfulRange {
        range(Included(-1.0), Included(1.0))
    }
    fn evaluate(&self, px: Nrgb, p: &ViParams) -> f64 {
        div(px.g - px.r, px.g + px.r, p.clip_eps)
    }
    fn rational_form(&self, _: &ViParams) -> Option<RationalForm> {
        Some(RationalForm::new(
            [0.0, 0.0, -1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 1.0, 0.0],
        ))
    }
}
