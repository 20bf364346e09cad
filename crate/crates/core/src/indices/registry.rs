use std::sync::OnceLock;

use super::{formulas, MeaningfulRange, ViKind, ViParams};
use crate::error::{Error, Result};
use crate::raster::Nrgb;

/// Coefficients of `(a0 + a . x) / (b0 + b . x)` over `x = (NIR, R, G, B)`.
/// Index 0 of each array is the constant term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RationalForm {
    pub numerator: [f64; 5],
    pub denominator: [f64; 5],
}

impl RationalForm {
    pub const fn new(numerator: [f64; 5], denominator: [f64; 5]) -> Self {
        Self {
            numerator,
            denominator,
        }
    }
}

/// One vegetation index: a per-pixel formula plus its metadata.
pub trait VegetationIndex: Send + Sync {
    fn kind(&self) -> ViKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn meaningful_range(&self) -> MeaningfulRange;

    /// Formula value at one pixel. Parameters must already have passed [`VegetationIndex::check`].
    fn evaluate(&self, px: Nrgb, params: &ViParams) -> f64;

    /// Ratio-of-affine coefficients, for indices that have that shape.
    fn rational_form(&self, _params: &ViParams) -> Option<RationalForm> {
        None
    }

    fn requires_dataset_stats(&self) -> bool {
        false
    }

    fn check(&self, params: &ViParams) -> Result<()> {
        params.validate()?;
        if self.requires_dataset_stats() && params.ndvi_range.is_none() {
            return Err(Error::MissingStatistics(format!(
                "{} needs dataset NDVI extrema",
                self.name()
            )));
        }
        Ok(())
    }
}

/// Name-keyed collection of indices.
pub struct IndexRegistry {
    entries: Vec<Box<dyn VegetationIndex>>,
}

impl IndexRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// All thirteen tabulated indices in canonical order.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for entry in formulas::standard() {
            r.register(entry);
        }
        r
    }

    /// Adds an index, replacing any existing entry of the same kind.
    pub fn register(&mut self, index: Box<dyn VegetationIndex>) {
        match self.entries.iter().position(|e| e.kind() == index.kind()) {
            Some(i) => self.entries[i] = index,
            None => self.entries.push(index),
        }
    }

    pub fn get(&self, kind: ViKind) -> Option<&dyn VegetationIndex> {
        self.entries
            .iter()
            .find(|e| e.kind() == kind)
            .map(|e| e.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Result<&dyn VegetationIndex> {
        self.entries
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownName {
                name: name.to_string(),
                expected: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn VegetationIndex> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Process-wide standard registry.
pub fn registry() -> &'static IndexRegistry {
    static REGISTRY: OnceLock<IndexRegistry> = OnceLock::new();
    REGISTRY.get_or_init(IndexRegistry::standard)
}
