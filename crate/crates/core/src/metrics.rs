//! Segmentation labels, predictions, and IoU under overlapping annotations.
//!
//! A pixel may carry several ground-truth labels. A prediction that matches
//! any of them is one true positive for the predicted class and costs the
//! other labels nothing. A prediction that matches none is a false positive
//! for the predicted class and a false negative for every label on the pixel.

use std::io::Write;

use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 32;

/// Per-pixel label sets stored as bitmasks over at most [`MAX_CLASSES`] classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    classes: usize,
    labels: Vec<u32>,
    valid: Vec<bool>,
}

impl LabelGrid {
    pub fn new(
        width: usize,
        height: usize,
        classes: usize,
        labels: Vec<u32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if classes == 0 || classes > MAX_CLASSES {
            return Err(Error::param(format!(
                "class count {classes} outside 1..={MAX_CLASSES}"
            )));
        }
        let n = width * height;
        if labels.len() != n || valid.len() != n {
            return Err(Error::Dimension(format!(
                "{width}x{height} label grid given {} labels and {} mask entries",
                labels.len(),
                valid.len()
            )));
        }
        let allowed = if classes == 32 {
            u32::MAX
        } else {
            (1u32 << classes) - 1
        };
        for (i, (&l, &v)) in labels.iter().zip(&valid).enumerate() {
            if l & !allowed != 0 {
                return Err(Error::param(format!(
                    "pixel {i} has a label outside {classes} classes"
                )));
            }
            if v && l == 0 {
                return Err(Error::param(format!("valid pixel {i} has no label")));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            labels,
            valid,
        })
    }

    /// Single-label grid from class indices; every pixel valid.
    pub fn from_classes(
        width: usize,
        height: usize,
        classes: usize,
        class_of: &[usize],
    ) -> Result<Self> {
        let labels = class_of
            .iter()
            .map(|&c| if c < 32 { 1u32 << c } else { u32::MAX })
            .collect();
        Self::new(width, height, classes, labels, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn has(&self, pixel: usize, class: usize) -> bool {
        self.labels[pixel] & (1 << class) != 0
    }

    pub fn label_count(&self, pixel: usize) -> u32 {
        self.labels[pixel].count_ones()
    }
}

/// One predicted class per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredGrid {
    width: usize,
    height: usize,
    classes: Vec<usize>,
}

impl PredGrid {
    pub fn new(width: usize, height: usize, classes: Vec<usize>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} prediction grid given {} entries",
                classes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }
}

/// Per-class counts accumulated over any number of grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub pixels: u64,
}

impl IouCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
            pixels: 0,
        }
    }

    pub fn add(&mut self, pred: &PredGrid, target: &LabelGrid) -> Result<()> {
        if pred.width != target.width || pred.height != target.height {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs labels {}x{}",
                pred.width, pred.height, target.width, target.height
            )));
        }
        let k = self.tp.len();
        if target.classes != k {
            return Err(Error::param(format!(
                "labels use {} classes, counts track {k}",
                target.classes
            )));
        }
        for (i, &p) in pred.classes.iter().enumerate() {
            if !target.valid[i] {
                continue;
            }
            if p >= k {
                return Err(Error::param(format!(
                    "predicted class {p} outside {k} classes"
                )));
            }
            self.pixels += 1;
            if target.has(i, p) {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                for c in (0..k).filter(|&c| target.has(i, c)) {
                    self.fn_[c] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> Result<IouReport> {
        if self.pixels == 0 {
            return Err(Error::Empty("no valid pixels to score".into()));
        }
        let iou: Vec<Option<f64>> = (0..self.tp.len())
            .map(|c| {
                let d = self.tp[c] + self.fp[c] + self.fn_[c];
                (d > 0).then(|| self.tp[c] as f64 / d as f64)
            })
            .collect();
        let defined: Vec<f64> = iou.iter().flatten().copied().collect();
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(IouReport {
            counts: self.clone(),
            iou,
            miou,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub counts: IouCounts,
    /// `None` where a class never occurs in labels or predictions.
    pub iou: Vec<Option<f64>>,
    /// Mean over classes with a defined IoU.
    pub miou: f64,
}

impl IouReport {
    /// CSV with header `class,tp,fp,fn,iou`, one row per class and a final `miou` row.
    pub fn write_csv<W: Write>(&self, names: &[&str], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "tp", "fp", "fn", "iou"])?;
        for (c, iou) in self.iou.iter().enumerate() {
            let name = names
                .get(c)
                .map_or_else(|| c.to_string(), |s| s.to_string());
            w.write_record([
                name,
                self.counts.tp[c].to_string(),
                self.counts.fp[c].to_string(),
                self.counts.fn_[c].to_string(),
                iou.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
        w.write_record(["miou", "", "", "", &self.miou.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

pub fn miou_overlapped(preds: &[PredGrid], targets: &[LabelGrid]) -> Result<IouReport> {
    if preds.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} label grids",
            preds.len(),
            targets.len()
        )));
    }
    let first = targets
        .first()
        .ok_or_else(|| Error::Empty("no label grids".into()))?;
    let mut counts = IouCounts::new(first.classes);
    for (p, t) in preds.iter().zip(targets) {
        counts.add(p, t)?;
    }
    counts.report()
}
