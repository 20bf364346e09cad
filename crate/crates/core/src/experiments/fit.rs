//! Fitting vegetation indices from raw NRGB pixels with a two-layer network.
//!
//! The network is `dense(4 -> hidden) -> norm -> relu -> dense(hidden -> 1)`,
//! trained with plain L1 on standardized targets. The score is the held-out L1
//! error as a percentage of the held-out target standard deviation, which lets
//! indices of very different scale be compared. Before scoring, the running
//! batch statistics are re-estimated over the whole training split so that the
//! evaluation does not depend on the last few mini-batches.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{cosine_lr, TrainSchedule};
use crate::diffcore::{
    dense_backward, dense_forward, relu_backward, relu_forward, Adam, AdamConfig, Dense,
    Parameterized, Shape4, Tensor4,
};
use crate::error::{Error, Result};
use crate::indices::{compute_vi, vci_stats, ViKind, ViParams};
use crate::norm::{self, NormMode, NormState};
use crate::raster::NrgbImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub batch_size: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub norm: NormMode,
    pub groups: usize,
    /// Initial gate logit for additive group normalization trained from scratch.
    pub rho_init: f64,
    pub target: ViKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            hidden: 16,
            epochs: 20,
            lr: 0.01,
            weight_decay: 5e-4,
            seed: 0,
            norm: NormMode::Batch,
            groups: 4,
            rho_init: 0.0,
            target: ViKind::Ndvi,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.hidden == 0 || self.epochs == 0 {
            return Err(Error::param(
                "batch size must be at least 2, hidden width and epochs positive",
            ));
        }
        if !matches!(self.norm, NormMode::Batch | NormMode::Additive) {
            return Err(Error::param(format!(
                "fit experiment supports bn and agn, not {}",
                self.norm
            )));
        }
        if self.hidden % self.groups != 0 {
            return Err(Error::param(format!(
                "hidden width {} not divisible into {} groups",
                self.hidden, self.groups
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }

    fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            max_lr: self.lr,
            min_lr: self.lr / 100.0,
            weight_decay: self.weight_decay,
            ..TrainSchedule::default()
        }
    }
}

/// NRGB pixels paired with the value of one index.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDataset {
    pub kind: ViKind,
    pub inputs: Vec<[f64; 4]>,
    pub targets: Vec<f64>,
}

/// Samples `count` valid pixels uniformly (with replacement) from `images` and
/// evaluates `kind` on each. VCI uses NDVI extrema over all of `images` unless
/// `params` already carries them.
pub fn pixel_dataset(
    images: &[NrgbImage],
    kind: ViKind,
    params: &ViParams,
    count: usize,
    seed: u64,
) -> Result<PixelDataset> {
    let mut params = *params;
    if kind == ViKind::Vci && params.ndvi_range.is_none() {
        let (lo, hi) = vci_stats(images, &params)?;
        params = params.with_ndvi_range(lo, hi);
    }
    let pool: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(k, img)| {
            (0..img.len())
                .filter(|&i| img.valid()[i])
                .map(move |i| (k, i))
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("no valid pixels to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..count)
        .map(|_| *pool.choose(&mut rng).expect("nonempty pool"))
        .collect();
    let rasters: Vec<_> = images
        .iter()
        .map(|img| compute_vi(kind, img, &params))
        .collect::<Result<_>>()?;
    let inputs = picks
        .iter()
        .map(|&(k, i)| images[k].pixel(i))
        .map(|p| [p.nir, p.r, p.g, p.b])
        .collect();
    let targets = picks.iter().map(|&(k, i)| rasters[k].values[i]).collect();
    Ok(PixelDataset {
        kind,
        inputs,
        targets,
    })
}

/// `100 * mean |pred - target| / std(target)`, with the population standard deviation.
pub fn relative_error_pct(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Empty("no held-out targets".into()));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(Error::Numerical("held-out target is constant".into()));
    }
    let l1 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    Ok(100.0 * l1 / sd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub relative_error_pct: f64,
    /// Held-out predictions and targets, in original units.
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    /// Mean training L1 (standardized units) per epoch.
    pub epoch_loss: Vec<f64>,
}

struct FitNet {
    first: Dense,
    norm: NormState,
    second: Dense,
}

impl Parameterized for FitNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.first.weight, &mut self.first.grad_weight);
        f(&mut self.first.bias, &mut self.first.grad_bias);
        f(&mut self.norm.scale, &mut self.norm.grad_scale);
        f(&mut self.norm.shift, &mut self.norm.grad_shift);
        f(&mut self.second.weight, &mut self.second.grad_weight);
        f(&mut self.second.bias, &mut self.second.grad_bias);
        if self.norm.mode == NormMode::Additive {
            f(
                std::slice::from_mut(&mut self.norm.rho),
                std::slice::from_mut(&mut self.norm.grad_rho),
            );
        }
    }
}

impl FitNet {
    fn new(config: &FitConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let norm = match config.norm {
            NormMode::Additive => {
                NormState::additive(config.hidden, config.groups, config.rho_init)?
            }
            mode => NormState::new(mode, config.hidden, config.groups)?,
        };
        Ok(Self {
            first: Dense::random(4, config.hidden, rng),
            norm,
            second: Dense::random(config.hidden, 1, rng),
        })
    }

    fn batch(inputs: &[[f64; 4]], idx: &[usize]) -> Tensor4 {
        let shape = Shape4::new(idx.len(), 4, 1, 1);
        let data = idx.iter().flat_map(|&i| inputs[i]).collect();
        Tensor4::from_vec(shape, data).expect("four channels per pixel")
    }

    fn predict(&mut self, x: &Tensor4) -> Result<Vec<f64>> {
        let h = dense_forward(x, &self.first)?;
        let (z, _) = norm::forward(&h, &mut self.norm)?;
        let a = relu_forward(&z);
        Ok(dense_forward(&a, &self.second)?.into_data())
    }

    /// Replaces the running batch statistics with exact ones over `idx`, using
    /// the final weights.
    fn recalibrate(&mut self, inputs: &[[f64; 4]], idx: &[usize]) -> Result<()> {
        let h = dense_forward(&Self::batch(inputs, idx), &self.first)?;
        let c = h.shape().c;
        let n = idx.len() as f64;
        for k in 0..c {
            let column = || h.data().iter().skip(k).step_by(c);
            let mean = column().sum::<f64>() / n;
            let var = column().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            self.norm.running_mean[k] = mean;
            self.norm.running_var[k] = var;
        }
        Ok(())
    }

    /// One optimization step on standardized targets; returns the batch L1.
    fn train_step(&mut self, mut x: Tensor4, y: &[f64], adam: &mut Adam) -> Result<f64> {
        self.zero_grad();
        let mut h = dense_forward(&x, &self.first)?;
        let (mut z, cache) = norm::forward(&h, &mut self.norm)?;
        let mut a = relu_forward(&z);
        let mut out = dense_forward(&a, &self.second)?;
        let b = y.len() as f64;
        let mut loss = 0.0;
        let (pred, grad) = out.split_mut();
        for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(y) {
            let d = p - t;
            loss += d.abs() / b;
            *g = d.signum() / b;
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss}")));
        }
        dense_backward(&mut a, &mut self.second, &out)?;
        relu_backward(&mut z, &a)?;
        norm::norm_backward(&mut h, &mut self.norm, &z, &cache)?;
        dense_backward(&mut x, &mut self.first, &h)?;
        adam.step(self)?;
        Ok(loss)
    }
}

/// Trains on 80% of `data` (split by seed) and scores on the rest.
pub fn fit_vi_experiment(config: &FitConfig, data: &PixelDataset) -> Result<FitOutcome> {
    config.validate()?;
    if data.inputs.len() != data.targets.len() {
        return Err(Error::Dimension(
            "pixel inputs and targets differ in length".into(),
        ));
    }
    if data.inputs.len() < 5 * config.batch_size {
        return Err(Error::Empty(format!(
            "{} pixels is too few to train and evaluate",
            data.inputs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    order.shuffle(&mut rng);
    let cut = order.len() * 4 / 5;
    let (train, test) = order.split_at(cut);

    let n = train.len() as f64;
    let mean = train.iter().map(|&i| data.targets[i]).sum::<f64>() / n;
    let sd = (train
        .iter()
        .map(|&i| (data.targets[i] - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::Numerical(format!(
            "{} target has no spread on the training split",
            data.kind
        )));
    }
    let standardized: Vec<f64> = data.targets.iter().map(|t| (t - mean) / sd).collect();

    let mut net = FitNet::new(config, &mut rng)?;
    let schedule = config.schedule();
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut shuffled = train.to_vec();
    for epoch in 0..config.epochs {
        adam.set_lr(cosine_lr(epoch, &schedule));
        shuffled.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in shuffled.chunks_exact(config.batch_size) {
            let y: Vec<f64> = idx.iter().map(|&i| standardized[i]).collect();
            total += net.train_step(FitNet::batch(&data.inputs, idx), &y, &mut adam)?;
            batches += 1;
        }
        epoch_loss.push(total / batches as f64);
    }

    net.recalibrate(&data.inputs, train)?;
    net.norm.training = false;
    let raw = net.predict(&FitNet::batch(&data.inputs, test))?;
    let predictions: Vec<f64> = raw.iter().map(|p| p * sd + mean).collect();
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite held-out prediction".into()));
    }
    let targets: Vec<f64> = test.iter().map(|&i| data.targets[i]).collect();
    let relative_error_pct = relative_error_pct(&predictions, &targets)?;
    Ok(FitOutcome {
        relative_error_pct,
        predictions,
        targets,
        epoch_loss,
    })
}
