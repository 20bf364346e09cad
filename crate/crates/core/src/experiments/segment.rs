//! Toy segmentation study comparing ways of feeding vegetation information to a
//! small convolutional network.
//!
//! Every variant shares the same backbone: three `conv -> norm -> relu` blocks
//! (3x3, 3x3, 1x1) and a 1x1 classification head with softmax. Variants differ
//! in what the first convolution sees and in the normalization layers; each is
//! a [`FusionVariant`] strategy selected by name from a [`VariantRegistry`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schedule::{cosine_lr, early_stop, TrainSchedule};
use super::synth::SynthDataset;
use crate::diffcore::{
    concat_channels, conv2d_backward, conv2d_backward_params, conv2d_forward,
    extend_input_channels, relu_backward, relu_forward, softmax_backward, softmax_forward,
    split_channels_backward, Adam, AdamConfig, ConvFilter, Padding, Parameterized, Tensor4,
};
use crate::error::{Error, Result};
use crate::gvi::{gvi_backward, gvi_init, GviCache, GviLayer, DEFAULT_CHANNELS, DEFAULT_KERNEL};
use crate::indices::{compute_all, vci_stats, ViParams};
use crate::loss::{combined_loss, combined_loss_backward, LossWeights};
use crate::metrics::{IouCounts, LabelGrid, PredGrid};
use crate::norm::{self, bn_to_agn_upgrade, NormCache, NormMode, NormState, DEFAULT_RHO};
use crate::raster::{stack_tensor, NrgbImage};

/// What the first convolution consumes besides standardized NRGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    None,
    /// The twelve network-input indices, computed up front and standardized.
    Indices,
    /// Learnable ratio-of-convolution channels over raw NRGB.
    Learnable,
}

pub trait FusionVariant: Send + Sync {
    /// Selector used on the command line.
    fn name(&self) -> &str;

    /// Row label in result tables.
    fn label(&self) -> &str;

    fn fusion(&self) -> Fusion;

    /// Called before each epoch; may restructure the network.
    fn before_epoch(&self, _net: &mut SegNet, _epoch: usize, _config: &SegConfig) -> Result<()> {
        Ok(())
    }
}

pub struct Baseline;
pub struct WithIndices;
pub struct WithGvi;
/// GVI input plus additive group normalization, swapped in for batch
/// normalization after a warm-start phase.
pub struct WithAgn;

impl FusionVariant for Baseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn label(&self) -> &str {
        "Baseline"
    }

    fn fusion(&self) -> Fusion {
        Fusion::None
    }
}

impl FusionVariant for WithIndices {
    fn name(&self) -> &str {
        "vi"
    }

    fn label(&self) -> &str {
        "Baseline + VI"
    }

    fn fusion(&self) -> Fusion {
        Fusion::Indices
    }
}

impl FusionVariant for WithGvi {
    fn name(&self) -> &str {
        "gvi"
    }

    fn label(&self) -> &str {
        "Baseline + GVI"
    }

    fn fusion(&self) -> Fusion {
        Fusion::Learnable
    }
}

impl FusionVariant for WithAgn {
    fn name(&self) -> &str {
        "agn"
    }

    fn label(&self) -> &str {
        "AGN"
    }

    fn fusion(&self) -> Fusion {
        Fusion::Learnable
    }

    fn before_epoch(&self, net: &mut SegNet, epoch: usize, config: &SegConfig) -> Result<()> {
        if epoch == config.warm_start_epochs() {
            net.upgrade_to_agn(config.groups, config.upgrade_rho)?;
        }
        Ok(())
    }
}

/// Variants by name, in table order.
pub struct VariantRegistry {
    variants: Vec<Box<dyn FusionVariant>>,
}

impl VariantRegistry {
    pub fn empty() -> Self {
        Self {
            variants: Vec::new(),
        }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Baseline));
        r.register(Box::new(WithIndices));
        r.register(Box::new(WithGvi));
        r.register(Box::new(WithAgn));
        r
    }

    /// Adds a variant, replacing one of the same name in place.
    pub fn register(&mut self, v: Box<dyn FusionVariant>) {
        match self.variants.iter().position(|x| x.name() == v.name()) {
            Some(i) => self.variants[i] = v,
            None => self.variants.push(v),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn FusionVariant> {
        self.variants
            .iter()
            .find(|v| v.name().eq_ignore_ascii_case(name))
            .map(|v| v.as_ref())
            .ok_or_else(|| Error::UnknownName {
                name: name.to_string(),
                expected: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.variants.iter().map(|v| v.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn FusionVariant> {
        self.variants.iter().map(|v| v.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegConfig {
    pub width: usize,
    pub batch_size: usize,
    pub schedule: TrainSchedule,
    pub loss: LossWeights,
    pub groups: usize,
    pub gvi_channels: usize,
    pub gvi_kernel: usize,
    /// Denominator clip of the fusion layer. Much larger than the index default
    /// so that a learned denominator passing through zero cannot flood the
    /// network with huge activations.
    pub gvi_clip_eps: f64,
    /// Fraction of epochs trained with batch normalization before the AGN upgrade.
    pub warm_start: f64,
    pub upgrade_rho: f64,
    pub validation_fraction: f64,
    pub vi_params: ViParams,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            width: 8,
            batch_size: 8,
            schedule: TrainSchedule::default(),
            loss: LossWeights::default(),
            groups: 4,
            gvi_channels: DEFAULT_CHANNELS,
            gvi_kernel: DEFAULT_KERNEL,
            gvi_clip_eps: 0.05,
            warm_start: 1.0 / 3.0,
            upgrade_rho: DEFAULT_RHO,
            validation_fraction: 0.2,
            vi_params: ViParams::default(),
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.width == 0 || self.width % self.groups != 0 {
            return Err(Error::param(format!(
                "width {} must be a positive multiple of {} groups",
                self.width, self.groups
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::param("batch size must be at least 2"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.warm_start) {
            return Err(Error::param("warm-start fraction must lie in [0, 1]"));
        }
        if !(self.gvi_clip_eps > 0.0 && self.gvi_clip_eps.is_finite()) {
            return Err(Error::param("fusion clip threshold must be positive"));
        }
        self.vi_params.validate()
    }

    pub fn warm_start_epochs(&self) -> usize {
        (self.schedule.epochs as f64 * self.warm_start).round() as usize
    }
}

pub const NUM_CLASSES: usize = 4;
const KERNELS: [usize; 3] = [3, 3, 1];

pub struct SegNet {
    pub fusion: Option<GviLayer>,
    pub convs: Vec<ConvFilter>,
    pub norms: Vec<NormState>,
    pub head: ConvFilter,
}

struct Trace {
    raw: Option<Tensor4>,
    static_in: Option<Tensor4>,
    fused: Option<(Tensor4, GviCache)>,
    input: Tensor4,
    pre: Vec<Tensor4>,
    normed: Vec<(Tensor4, NormCache)>,
    act: Vec<Tensor4>,
    logits: Tensor4,
    probs: Tensor4,
}

impl SegNet {
    /// `static_channels` are the precomputed inputs (standardized NRGB first,
    /// then any extra channels). The NRGB part of the first kernel is a random
    /// RGB kernel widened by copying its red slice into the NIR slot.
    pub fn new(
        static_channels: usize,
        config: &SegConfig,
        fusion: Fusion,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gvi = match fusion {
            Fusion::Learnable => {
                let mut g = gvi_init(config.gvi_channels, config.gvi_kernel, rng.random(), true)?;
                g.clip_eps = config.gvi_clip_eps;
                Some(g)
            }
            _ => None,
        };
        let extra = static_channels - 4 + gvi.as_ref().map_or(0, GviLayer::channels);
        let k0 = KERNELS[0];
        let fan_in = ((4 + extra) * k0 * k0) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let mut rgb_rng = ChaCha8Rng::seed_from_u64(seed);
        rgb_rng.set_stream(1);
        let mut extra_rng = ChaCha8Rng::seed_from_u64(seed);
        extra_rng.set_stream(2);
        let mut w = Vec::with_capacity(config.width * (3 + extra) * k0 * k0);
        for _ in 0..config.width {
            for ci in 0..3 + extra {
                let r = if ci < 3 { &mut rgb_rng } else { &mut extra_rng };
                w.extend((0..k0 * k0).map(|_| r.random_range(-bound..bound)));
            }
        }
        let rgb_first =
            ConvFilter::from_parts(config.width, 3 + extra, k0, w, vec![0.0; config.width])?;
        let mut convs = vec![extend_input_channels(&rgb_first, 0, 0)?];
        let mut body_rng = ChaCha8Rng::seed_from_u64(seed);
        body_rng.set_stream(3);
        for &k in &KERNELS[1..] {
            convs.push(ConvFilter::random(
                config.width,
                config.width,
                k,
                1.0,
                &mut body_rng,
            )?);
        }
        let norms = KERNELS
            .iter()
            .map(|_| NormState::batch(config.width))
            .collect::<Result<_>>()?;
        let head = ConvFilter::random(NUM_CLASSES, config.width, 1, 1.0, &mut body_rng)?;
        Ok(Self {
            fusion: gvi,
            convs,
            norms,
            head,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.convs[0].c_in()
    }

    /// Replaces every batch-normalization layer by additive group normalization.
    pub fn upgrade_to_agn(&mut self, groups: usize, rho: f64) -> Result<()> {
        for n in &mut self.norms {
            if n.mode == NormMode::Batch {
                *n = bn_to_agn_upgrade(n, groups, rho)?;
            }
        }
        Ok(())
    }

    pub fn set_training(&mut self, training: bool) {
        self.norms.iter_mut().for_each(|n| n.training = training);
    }

    fn forward(&mut self, static_in: Tensor4, raw: Option<Tensor4>) -> Result<Trace> {
        let (input, fused, static_in, raw) = match (&self.fusion, raw) {
            (Some(g), Some(raw)) => {
                let (out, cache) = g.forward_cached(&raw)?;
                let input = concat_channels(&[&static_in, &out])?;
                (input, Some((out, cache)), Some(static_in), Some(raw))
            }
            (Some(_), None) => return Err(Error::shape("learnable fusion needs raw NRGB input")),
            (None, _) => (static_in, None, None, None),
        };
        let mut pre = Vec::with_capacity(KERNELS.len());
        let mut normed = Vec::with_capacity(KERNELS.len());
        let mut act: Vec<Tensor4> = Vec::with_capacity(KERNELS.len());
        for i in 0..KERNELS.len() {
            let x = if i == 0 { &input } else { &act[i - 1] };
            let z = conv2d_forward(x, &self.convs[i], Padding::Same)?;
            let (y, cache) = norm::forward(&z, &mut self.norms[i])?;
            act.push(relu_forward(&y));
            pre.push(z);
            normed.push((y, cache));
        }
        let logits = conv2d_forward(act.last().expect("three blocks"), &self.head, Padding::Same)?;
        let probs = softmax_forward(&logits);
        Ok(Trace {
            raw,
            static_in,
            fused,
            input,
            pre,
            normed,
            act,
            logits,
            probs,
        })
    }

    /// Backpropagates from `t.probs.grad`.
    fn backward(&mut self, t: &mut Trace) -> Result<()> {
        softmax_backward(&mut t.logits, &t.probs)?;
        let last = KERNELS.len() - 1;
        conv2d_backward(&mut t.act[last], &mut self.head, &t.logits, Padding::Same)?;
        for i in (0..KERNELS.len()).rev() {
            let (y, cache) = &mut t.normed[i];
            relu_backward(y, &t.act[i])?;
            norm::norm_backward(&mut t.pre[i], &mut self.norms[i], y, cache)?;
            if i > 0 {
                conv2d_backward(
                    &mut t.act[i - 1],
                    &mut self.convs[i],
                    &t.pre[i],
                    Padding::Same,
                )?;
            } else if self.fusion.is_some() {
                conv2d_backward(&mut t.input, &mut self.convs[0], &t.pre[0], Padding::Same)?;
            } else {
                conv2d_backward_params(&mut t.input, &mut self.convs[0], &t.pre[0], Padding::Same)?;
            }
        }
        if let (Some(g), Some((out, cache)), Some(s), Some(raw)) = (
            self.fusion.as_mut(),
            t.fused.take(),
            t.static_in.as_mut(),
            t.raw.as_mut(),
        ) {
            let mut out = out;
            split_channels_backward(&mut [s, &mut out], &t.input)?;
            gvi_backward(g, raw, &out, cache)?;
        }
        Ok(())
    }

    /// Per-pixel argmax in eval mode.
    pub fn predict(&mut self, static_in: Tensor4, raw: Option<Tensor4>) -> Result<Vec<Vec<usize>>> {
        let was = self.norms.iter().map(|n| n.training).collect::<Vec<_>>();
        self.set_training(false);
        let trace = self.forward(static_in, raw);
        for (n, w) in self.norms.iter_mut().zip(was) {
            n.training = w;
        }
        let probs = trace?.probs;
        let s = probs.shape();
        let p = s.plane();
        Ok((0..s.n)
            .map(|n| {
                (0..p)
                    .map(|pos| {
                        (0..s.c)
                            .map(|c| probs.data()[(n * s.c + c) * p + pos])
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (c, v)| {
                                if v > best.1 {
                                    (c, v)
                                } else {
                                    best
                                }
                            })
                            .0
                    })
                    .collect()
            })
            .collect())
    }

    /// Mean absolute gradient of the fusion layer's filters, if present.
    pub fn fusion_grad_magnitude(&self) -> Option<f64> {
        self.fusion.as_ref().map(|g| {
            let all: Vec<f64> = [&g.alpha.grad_weight, &g.beta.grad_weight]
                .into_iter()
                .flatten()
                .copied()
                .collect();
            all.iter().map(|v| v.abs()).sum::<f64>() / all.len() as f64
        })
    }
}

impl Parameterized for SegNet {
    /// Gate logits come last, so buffers added by the AGN upgrade extend the
    /// optimizer state rather than shifting it.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        if let Some(g) = self.fusion.as_mut() {
            g.visit_params(f);
        }
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            f(&mut c.weight, &mut c.grad_weight);
            f(&mut c.bias, &mut c.grad_bias);
            f(&mut n.scale, &mut n.grad_scale);
            f(&mut n.shift, &mut n.grad_shift);
        }
        f(&mut self.head.weight, &mut self.head.grad_weight);
        f(&mut self.head.bias, &mut self.head.grad_bias);
        for n in self
            .norms
            .iter_mut()
            .filter(|n| n.mode == NormMode::Additive)
        {
            f(
                std::slice::from_mut(&mut n.rho),
                std::slice::from_mut(&mut n.grad_rho),
            );
        }
    }
}

/// Network inputs for every image of a dataset.
struct Inputs {
    static_in: Tensor4,
    raw: Tensor4,
}

impl Inputs {
    fn batch(&self, idx: &[usize], learnable: bool) -> (Tensor4, Option<Tensor4>) {
        (
            self.static_in.select_batch(idx),
            learnable.then(|| self.raw.select_batch(idx)),
        )
    }
}

/// Builds standardized inputs; channel statistics come from the training images only.
fn prepare_inputs(
    images: &[NrgbImage],
    train: &[usize],
    fusion: Fusion,
    params: &ViParams,
) -> Result<Inputs> {
    let refs: Vec<&NrgbImage> = images.iter().collect();
    let raw = stack_tensor(&refs)?;
    let static_raw = if fusion == Fusion::Indices {
        let train_images: Vec<NrgbImage> = train.iter().map(|&i| images[i].clone()).collect();
        let (lo, hi) = vci_stats(&train_images, params)?;
        let p = params.with_ndvi_range(lo, hi);
        let s = raw.shape();
        let plane = s.plane();
        let extra = 12;
        let mut data = Vec::with_capacity(s.n * (4 + extra) * plane);
        for (n, img) in images.iter().enumerate() {
            data.extend_from_slice(&raw.data()[n * 4 * plane..(n + 1) * 4 * plane]);
            for r in compute_all(img, &p)? {
                data.extend_from_slice(&r.values);
            }
        }
        Tensor4::from_vec(s.with_channels(4 + extra), data)?
    } else {
        raw.clone()
    };
    let s = static_raw.shape();
    let plane = s.plane();
    let mut static_in = static_raw;
    for c in 0..s.c {
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for &n in train {
            let vals = static_in.plane(n, c);
            for (v, _) in vals.iter().zip(images[n].valid()).filter(|(_, m)| **m) {
                sum += v;
                sq += v * v;
                count += 1.0;
            }
        }
        if count == 0.0 {
            return Err(Error::Empty("no valid training pixels".into()));
        }
        let mean = sum / count;
        let sd = (sq / count - mean * mean).max(0.0).sqrt().max(1e-8);
        let data = static_in.data_mut();
        for n in 0..s.n {
            for v in &mut data[(n * s.c + c) * plane..(n * s.c + c + 1) * plane] {
                *v = (*v - mean) / sd;
            }
        }
    }
    Ok(Inputs { static_in, raw })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
    /// Mean |grad| of the fusion filters on the epoch's last batch.
    pub fusion_grad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegOutcome {
    pub variant: String,
    pub seed: u64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn evaluate(
    net: &mut SegNet,
    inputs: &Inputs,
    labels: &[LabelGrid],
    idx: &[usize],
    batch: usize,
) -> Result<(f64, Vec<Option<f64>>)> {
    let learnable = net.fusion.is_some();
    let mut counts = IouCounts::new(NUM_CLASSES);
    for chunk in idx.chunks(batch) {
        let (s, r) = inputs.batch(chunk, learnable);
        let preds = net.predict(s, r)?;
        for (&i, p) in chunk.iter().zip(preds) {
            let g = &labels[i];
            counts.add(&PredGrid::new(g.width(), g.height(), p)?, g)?;
        }
    }
    let report = counts.report()?;
    Ok((report.miou, report.iou))
}

/// Trains `variant` on an 80/20 image split of `data` and reports held-out
/// overlapped-label IoU after the final epoch.
pub fn toy_segmentation_experiment(
    variant: &dyn FusionVariant,
    data: &SynthDataset,
    config: &SegConfig,
    seed: u64,
) -> Result<SegOutcome> {
    config.validate()?;
    let count = data.images.len();
    if count != data.labels.len() {
        return Err(Error::Dimension(format!(
            "{count} images with {} label grids",
            data.labels.len()
        )));
    }
    let val_count = ((count as f64) * config.validation_fraction).round() as usize;
    if val_count == 0 || count - val_count < config.batch_size {
        return Err(Error::Empty(format!(
            "{count} images are too few for a train/validation split"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let (val, train) = order.split_at(val_count);
    let (val, mut train) = (val.to_vec(), train.to_vec());

    let fusion = variant.fusion();
    let inputs = prepare_inputs(&data.images, &train, fusion, &config.vi_params)?;
    let learnable = fusion == Fusion::Learnable;
    let mut net = SegNet::new(inputs.static_in.shape().c, config, fusion, seed)?;
    let s = &config.schedule;
    let mut adam = Adam::new(AdamConfig {
        lr: s.max_lr,
        weight_decay: s.weight_decay,
        ..Default::default()
    });

    let mut records = Vec::with_capacity(s.epochs);
    let mut history = Vec::with_capacity(s.epochs);
    let mut stopped_early = false;
    for epoch in 0..s.epochs {
        variant.before_epoch(&mut net, epoch, config)?;
        let lr = cosine_lr(epoch, s);
        adam.set_lr(lr);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in train.chunks_exact(config.batch_size) {
            net.zero_grad();
            let (st, raw) = inputs.batch(idx, learnable);
            let mut trace = net.forward(st, raw)?;
            let targets: Vec<LabelGrid> = idx.iter().map(|&i| data.labels[i].clone()).collect();
            let loss = combined_loss(&trace.probs, &targets, &config.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} diverged at epoch {epoch}",
                    variant.name()
                )));
            }
            combined_loss_backward(&mut trace.probs, &targets, &config.loss)?;
            net.backward(&mut trace)?;
            adam.step(&mut net)?;
            total += loss;
            batches += 1;
        }
        let loss = total / batches as f64;
        let fusion_grad = net.fusion_grad_magnitude();
        let (miou, iou) = evaluate(&mut net, &inputs, &data.labels, &val, config.batch_size)?;
        records.push(EpochRecord {
            epoch,
            loss,
            lr,
            miou,
            iou,
            fusion_grad,
        });
        history.push(loss);
        if early_stop(&history, s.patience) {
            stopped_early = true;
            break;
        }
    }
    let last = records.last().expect("at least one epoch");
    Ok(SegOutcome {
        variant: variant.name().to_string(),
        seed,
        miou: last.miou,
        iou: last.iou.clone(),
        stopped_early,
        epochs: records,
    })
}
