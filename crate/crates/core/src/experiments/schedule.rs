//! Learning-rate schedule and early stopping.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub max_lr: f64,
    pub min_lr: f64,
    pub cycle_epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            max_lr: 0.01,
            min_lr: 1e-4,
            cycle_epochs: 10,
            weight_decay: 5e-4,
            patience: 10,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.cycle_epochs == 0 || self.patience == 0 {
            return Err(Error::param(
                "epochs, cycle length and patience must be positive",
            ));
        }
        if !(self.min_lr > 0.0 && self.min_lr < self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::param(format!(
                "learning-rate range [{}, {}] is not increasing",
                self.min_lr, self.max_lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param(format!(
                "weight decay {} is negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Cosine annealing from `max_lr` down towards `min_lr`, restarting every cycle.
pub fn cosine_lr(epoch: usize, s: &TrainSchedule) -> f64 {
    let phase = (epoch % s.cycle_epochs) as f64 / s.cycle_epochs as f64;
    s.min_lr + (s.max_lr - s.min_lr) * (1.0 + (PI * phase).cos()) / 2.0
}

/// True once the best loss is at least `patience` epochs old.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    let Some(best) = history
        .iter()
        .enumerate()
        .fold(None, |b: Option<(usize, f64)>, (i, &v)| match b {
            Some((_, bv)) if bv <= v => b,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return false;
    };
    history.len() - 1 - best >= patience
}
