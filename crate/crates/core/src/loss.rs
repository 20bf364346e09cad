//! Focal and dice losses over per-pixel class probabilities `[N, K, H, W]`.
//!
//! Both average over valid pixels only. Forward functions return the loss;
//! `*_backward` functions accumulate `weight * d loss / d probs` into `probs.grad`.

use crate::diffcore::Tensor4;
use crate::error::{Error, Result};
use crate::metrics::LabelGrid;

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
pub const DICE_SMOOTH: f64 = 1.0;

/// Mixing weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub focal: f64,
    pub dice: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            focal: 0.75,
            dice: 0.25,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

fn check(probs: &Tensor4, targets: &[LabelGrid]) -> Result<()> {
    let s = probs.shape();
    if targets.len() != s.n {
        return Err(Error::shape(format!(
            "{} label grids for batch of {}",
            targets.len(),
            s.n
        )));
    }
    for t in targets {
        if t.width() != s.w || t.height() != s.h || t.classes() != s.c {
            return Err(Error::shape(format!(
                "labels {}x{} over {} classes vs probabilities {s}",
                t.width(),
                t.height(),
                t.classes()
            )));
        }
    }
    Ok(())
}

fn valid_count(targets: &[LabelGrid]) -> Result<usize> {
    let n: usize = targets
        .iter()
        .map(|t| t.valid().iter().filter(|v| **v).count())
        .sum();
    if n == 0 {
        return Err(Error::Empty("no valid pixels in batch".into()));
    }
    Ok(n)
}

/// Index into `probs` of the most probable target class at one pixel.
fn target_index(probs: &Tensor4, t: &LabelGrid, n: usize, pos: usize) -> usize {
    let s = probs.shape();
    let p = s.plane();
    (0..s.c)
        .filter(|&c| t.has(pos, c))
        .map(|c| (n * s.c + c) * p + pos)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if probs.data()[b] >= probs.data()[i] => Some(b),
            _ => Some(i),
        })
        .expect("valid pixels carry a label")
}

/// Mean over valid pixels of `-(1 - p_t)^gamma * ln p_t`, with `p_t` the largest
/// probability among the pixel's target classes.
pub fn focal_loss(probs: &Tensor4, targets: &[LabelGrid], gamma: f64) -> Result<f64> {
    check(probs, targets)?;
    let count = valid_count(targets)?;
    let mut total = 0.0;
    for (n, t) in targets.iter().enumerate() {
        for pos in (0..t.len()).filter(|&i| t.valid()[i]) {
            let pt = probs.data()[target_index(probs, t, n, pos)];
            if !(pt > 0.0) {
                return Err(Error::Numerical(format!(
                    "zero probability at a target (pixel {pos})"
                )));
            }
            total -= (1.0 - pt).powf(gamma) * pt.ln();
        }
    }
    Ok(total / count as f64)
}

pub fn focal_loss_backward(
    probs: &mut Tensor4,
    targets: &[LabelGrid],
    gamma: f64,
    weight: f64,
) -> Result<()> {
    check(probs, targets)?;
    let scale = weight / valid_count(targets)? as f64;
    for (n, t) in targets.iter().enumerate() {
        for pos in (0..t.len()).filter(|&i| t.valid()[i]) {
            let i = target_index(probs, t, n, pos);
            let pt = probs.data()[i];
            if !(pt > 0.0) {
                return Err(Error::Numerical(format!(
                    "zero probability at a target (pixel {pos})"
                )));
            }
            let q = 1.0 - pt;
            let mut d = -q.powf(gamma) / pt;
            if gamma != 0.0 && q > 0.0 {
                d += gamma * q.powf(gamma - 1.0) * pt.ln();
            }
            probs.grad[i] += scale * d;
        }
    }
    Ok(())
}

struct DiceSums {
    inter: Vec<f64>,
    pred: Vec<f64>,
    truth: Vec<f64>,
}

fn dice_sums(probs: &Tensor4, targets: &[LabelGrid]) -> DiceSums {
    let s = probs.shape();
    let p = s.plane();
    let mut d = DiceSums {
        inter: vec![0.0; s.c],
        pred: vec![0.0; s.c],
        truth: vec![0.0; s.c],
    };
    for (n, t) in targets.iter().enumerate() {
        for c in 0..s.c {
            let plane = probs.plane(n, c);
            for pos in (0..p).filter(|&i| t.valid()[i]) {
                let pr = plane[pos];
                d.pred[c] += pr;
                if t.has(pos, c) {
                    d.inter[c] += pr;
                    d.truth[c] += 1.0;
                }
            }
        }
    }
    d
}

/// `1 - mean_c (2 I_c + 1) / (P_c + T_c + 1)` over multi-hot targets.
pub fn dice_loss(probs: &Tensor4, targets: &[LabelGrid]) -> Result<f64> {
    check(probs, targets)?;
    let d = dice_sums(probs, targets);
    let k = d.inter.len();
    let mean = (0..k)
        .map(|c| (2.0 * d.inter[c] + DICE_SMOOTH) / (d.pred[c] + d.truth[c] + DICE_SMOOTH))
        .sum::<f64>()
        / k as f64;
    Ok(1.0 - mean)
}

pub fn dice_loss_backward(probs: &mut Tensor4, targets: &[LabelGrid], weight: f64) -> Result<()> {
    check(probs, targets)?;
    let d = dice_sums(probs, targets);
    let s = probs.shape();
    let p = s.plane();
    let k = s.c as f64;
    for c in 0..s.c {
        let den = d.pred[c] + d.truth[c] + DICE_SMOOTH;
        let num = 2.0 * d.inter[c] + DICE_SMOOTH;
        // d/dp of -(num/den)/K for t = 0 and t = 1
        let g0 = weight * num / (den * den) / k;
        let g1 = weight * (num / (den * den) - 2.0 / den) / k;
        for (n, t) in targets.iter().enumerate() {
            let base = (n * s.c + c) * p;
            for pos in (0..p).filter(|&i| t.valid()[i]) {
                probs.grad[base + pos] += if t.has(pos, c) { g1 } else { g0 };
            }
        }
    }
    Ok(())
}

pub fn combined_loss(probs: &Tensor4, targets: &[LabelGrid], w: &LossWeights) -> Result<f64> {
    Ok(w.focal * focal_loss(probs, targets, w.focal_gamma)? + w.dice * dice_loss(probs, targets)?)
}

pub fn combined_loss_backward(
    probs: &mut Tensor4,
    targets: &[LabelGrid],
    w: &LossWeights,
) -> Result<()> {
    focal_loss_backward(probs, targets, w.focal_gamma, w.focal)?;
    dice_loss_backward(probs, targets, w.dice)
}
