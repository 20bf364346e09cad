//! Batch, group (with instance/layer as its extremes) and additive group normalization.
//!
//! Additive group normalization sums a gated group-normalized response and a
//! batch-normalized response, then applies the layer's single per-channel
//! affine:
//!
//! ```text
//! y = scale[c] * (sigmoid(rho) * gn(x) + bn(x)) + shift[c]
//! ```
//!
//! With `rho` very negative the layer behaves as plain batch normalization,
//! which is what [`bn_to_agn_upgrade`] relies on to swap it into a trained
//! network without disturbing it.

use std::fmt;
use std::str::FromStr;

use crate::diffcore::{sigmoid, Parameterized, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Batch,
    Group,
    Instance,
    Layer,
    Additive,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::Batch => "bn",
            NormMode::Group => "gn",
            NormMode::Instance => "in",
            NormMode::Layer => "ln",
            NormMode::Additive => "agn",
        }
    }

    fn uses_batch_branch(self) -> bool {
        matches!(self, NormMode::Batch | NormMode::Additive)
    }

    fn uses_group_branch(self) -> bool {
        !matches!(self, NormMode::Batch)
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            NormMode::Batch,
            NormMode::Group,
            NormMode::Instance,
            NormMode::Layer,
            NormMode::Additive,
        ]
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::UnknownName {
            name: s.into(),
            expected: "bn, gn, in, ln, agn".into(),
        })
    }
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_RHO: f64 = -10.0;
pub const DEFAULT_GROUPS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub mode: NormMode,
    channels: usize,
    groups: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    /// Gate logit of the group branch; used only in [`NormMode::Additive`].
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
    pub grad_scale: Vec<f64>,
    pub grad_shift: Vec<f64>,
    pub grad_rho: f64,
}

impl NormState {
    fn build(mode: NormMode, channels: usize, groups: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::param("normalization over zero channels"));
        }
        if groups == 0 || groups > channels || channels % groups != 0 {
            return Err(Error::param(format!(
                "{channels} channels cannot split into {groups} groups"
            )));
        }
        Ok(Self {
            mode,
            channels,
            groups,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            rho: DEFAULT_RHO,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            training: true,
            grad_scale: vec![0.0; channels],
            grad_shift: vec![0.0; channels],
            grad_rho: 0.0,
        })
    }

    pub fn batch(channels: usize) -> Result<Self> {
        Self::build(NormMode::Batch, channels, 1)
    }

    pub fn group(channels: usize, groups: usize) -> Result<Self> {
        Self::build(NormMode::Group, channels, groups)
    }

    pub fn instance(channels: usize) -> Result<Self> {
        Self::build(NormMode::Instance, channels, channels)
    }

    pub fn layer(channels: usize) -> Result<Self> {
        Self::build(NormMode::Layer, channels, 1)
    }

    pub fn additive(channels: usize, groups: usize, rho: f64) -> Result<Self> {
        let mut s = Self::build(NormMode::Additive, channels, groups)?;
        s.rho = rho;
        Ok(s)
    }

    pub fn new(mode: NormMode, channels: usize, groups: usize) -> Result<Self> {
        match mode {
            NormMode::Batch => Self::batch(channels),
            NormMode::Group => Self::group(channels, groups),
            NormMode::Instance => Self::instance(channels),
            NormMode::Layer => Self::layer(channels),
            NormMode::Additive => Self::additive(channels, groups, DEFAULT_RHO),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Group count actually used by the group branch.
    pub fn groups(&self) -> usize {
        match self.mode {
            NormMode::Instance => self.channels,
            NormMode::Layer | NormMode::Batch => 1,
            NormMode::Group | NormMode::Additive => self.groups,
        }
    }

    pub fn gate(&self) -> f64 {
        sigmoid(self.rho)
    }

    pub fn zero_grad(&mut self) {
        self.grad_scale.iter_mut().for_each(|g| *g = 0.0);
        self.grad_shift.iter_mut().for_each(|g| *g = 0.0);
        self.grad_rho = 0.0;
    }
}

impl Parameterized for NormState {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.scale, &mut self.grad_scale);
        f(&mut self.shift, &mut self.grad_shift);
        if self.mode == NormMode::Additive {
            f(
                std::slice::from_mut(&mut self.rho),
                std::slice::from_mut(&mut self.grad_rho),
            );
        }
    }
}

/// Intermediates kept by [`forward`] for [`norm_backward`].
#[derive(Debug, Clone)]
pub struct NormCache {
    mode: NormMode,
    training: bool,
    gate: f64,
    /// Pre-affine response (`gate * gn + bn`).
    mixed: Vec<f64>,
    bn_hat: Vec<f64>,
    bn_inv_std: Vec<f64>,
    gn_hat: Vec<f64>,
    /// Indexed `[n * groups + g]`.
    gn_inv_std: Vec<f64>,
}

fn check_input(x: &Tensor4, s: &NormState) -> Result<()> {
    if x.shape().c != s.channels {
        return Err(Error::shape(format!(
            "normalization over {} channels given {}",
            s.channels,
            x.shape().c
        )));
    }
    Ok(())
}

fn batch_branch(x: &Tensor4, s: &mut NormState) -> Result<(Vec<f64>, Vec<f64>)> {
    let sh = x.shape();
    let p = sh.plane();
    let m = sh.n * p;
    let mut inv_std = vec![0.0; sh.c];
    let mut hat = vec![0.0; sh.len()];
    for c in 0..sh.c {
        let (mean, var) = if s.training {
            if m < 2 {
                return Err(Error::shape(format!(
                    "batch statistics need at least 2 values per channel, got {m}"
                )));
            }
            let mean = (0..sh.n)
                .map(|n| x.plane(n, c).iter().sum::<f64>())
                .sum::<f64>()
                / m as f64;
            let ss: f64 = (0..sh.n)
                .map(|n| {
                    x.plane(n, c)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                })
                .sum();
            let var = ss / m as f64;
            let unbiased = ss / (m - 1) as f64;
            s.running_mean[c] = (1.0 - s.momentum) * s.running_mean[c] + s.momentum * mean;
            s.running_var[c] = (1.0 - s.momentum) * s.running_var[c] + s.momentum * unbiased;
            (mean, var)
        } else {
            (s.running_mean[c], s.running_var[c])
        };
        let is = 1.0 / (var + s.eps).sqrt();
        inv_std[c] = is;
        for n in 0..sh.n {
            let base = (n * sh.c + c) * p;
            for (h, v) in hat[base..base + p].iter_mut().zip(x.plane(n, c)) {
                *h = (v - mean) * is;
            }
        }
    }
    Ok((hat, inv_std))
}

fn group_branch(x: &Tensor4, groups: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let sh = x.shape();
    let per = sh.c / groups * sh.plane();
    let mut hat = vec![0.0; sh.len()];
    let mut inv_std = vec![0.0; sh.n * groups];
    for n in 0..sh.n {
        for g in 0..groups {
            let start = n * sh.c * sh.plane() + g * per;
            let vals = &x.data()[start..start + per];
            let mean = vals.iter().sum::<f64>() / per as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[n * groups + g] = is;
            for (h, v) in hat[start..start + per].iter_mut().zip(vals) {
                *h = (v - mean) * is;
            }
        }
    }
    (hat, inv_std)
}

/// Normalizes according to `s.mode`. In training mode the batch branch uses
/// mini-batch statistics and updates the running estimates.
pub fn forward(x: &Tensor4, s: &mut NormState) -> Result<(Tensor4, NormCache)> {
    check_input(x, s)?;
    let sh = x.shape();
    let (bn_hat, bn_inv_std) = if s.mode.uses_batch_branch() {
        batch_branch(x, s)?
    } else {
        (Vec::new(), Vec::new())
    };
    let (gn_hat, gn_inv_std) = if s.mode.uses_group_branch() {
        group_branch(x, s.groups(), s.eps)
    } else {
        (Vec::new(), Vec::new())
    };
    let gate = if s.mode == NormMode::Additive {
        s.gate()
    } else {
        1.0
    };
    let mixed: Vec<f64> = match s.mode {
        NormMode::Batch => bn_hat.clone(),
        NormMode::Additive => gn_hat
            .iter()
            .zip(&bn_hat)
            .map(|(g, b)| gate * g + b)
            .collect(),
        _ => gn_hat.clone(),
    };
    let mut out = Tensor4::zeros(sh);
    let p = sh.plane();
    for n in 0..sh.n {
        for c in 0..sh.c {
            let base = (n * sh.c + c) * p;
            let (a, b) = (s.scale[c], s.shift[c]);
            for (o, z) in out.data_mut()[base..base + p]
                .iter_mut()
                .zip(&mixed[base..base + p])
            {
                *o = a * z + b;
            }
        }
    }
    let cache = NormCache {
        mode: s.mode,
        training: s.training,
        gate,
        mixed,
        bn_hat,
        bn_inv_std,
        gn_hat,
        gn_inv_std,
    };
    Ok((out, cache))
}

/// Batch normalization; `s` must be in [`NormMode::Batch`].
pub fn batch_norm(x: &Tensor4, s: &mut NormState) -> Result<Tensor4> {
    expect_mode(s, &[NormMode::Batch])?;
    forward(x, s).map(|(y, _)| y)
}

/// Group normalization, including its instance (`G = C`) and layer (`G = 1`) forms.
pub fn group_norm(x: &Tensor4, s: &mut NormState) -> Result<Tensor4> {
    expect_mode(s, &[NormMode::Group, NormMode::Instance, NormMode::Layer])?;
    forward(x, s).map(|(y, _)| y)
}

/// Additive group normalization; `s` must be in [`NormMode::Additive`].
pub fn agn(x: &Tensor4, s: &mut NormState) -> Result<Tensor4> {
    expect_mode(s, &[NormMode::Additive])?;
    forward(x, s).map(|(y, _)| y)
}

fn expect_mode(s: &NormState, modes: &[NormMode]) -> Result<()> {
    if !modes.contains(&s.mode) {
        return Err(Error::param(format!(
            "normalization state is in {} mode",
            s.mode
        )));
    }
    Ok(())
}

/// Adjoint of a normalization over one reduction set: given `d hat`, returns
/// `d x = inv_std * (d hat - mean(d hat) - hat * mean(d hat * hat))`.
fn standardize_backward(dhat: &[f64], hat: &[f64], inv_std: f64, dx: &mut [f64]) {
    let m = dhat.len() as f64;
    let mean_d = dhat.iter().sum::<f64>() / m;
    let mean_dh = dhat.iter().zip(hat).map(|(d, h)| d * h).sum::<f64>() / m;
    for ((o, d), h) in dx.iter_mut().zip(dhat).zip(hat) {
        *o += inv_std * (d - mean_d - h * mean_dh);
    }
}

/// Accumulates gradients for `x`, the affine parameters and (additive mode) `rho`,
/// reading the upstream gradient from `out.grad`.
pub fn norm_backward(
    x: &mut Tensor4,
    s: &mut NormState,
    out: &Tensor4,
    cache: &NormCache,
) -> Result<()> {
    check_input(x, s)?;
    x.check_same_shape(out, "normalization upstream")?;
    if cache.mode != s.mode || cache.mixed.len() != out.grad.len() {
        return Err(Error::shape(
            "normalization cache does not match this layer",
        ));
    }
    let sh = x.shape();
    let p = sh.plane();

    // d(pre-affine) and affine gradients
    let mut dz = vec![0.0; sh.len()];
    for n in 0..sh.n {
        for c in 0..sh.c {
            let base = (n * sh.c + c) * p;
            for i in base..base + p {
                let up = out.grad[i];
                s.grad_shift[c] += up;
                s.grad_scale[c] += up * cache.mixed[i];
                dz[i] = up * s.scale[c];
            }
        }
    }

    if s.mode.uses_batch_branch() {
        for c in 0..sh.c {
            if cache.training {
                let mut dhat = Vec::with_capacity(sh.n * p);
                let mut hat = Vec::with_capacity(sh.n * p);
                for n in 0..sh.n {
                    let base = (n * sh.c + c) * p;
                    dhat.extend_from_slice(&dz[base..base + p]);
                    hat.extend_from_slice(&cache.bn_hat[base..base + p]);
                }
                let mut dx = vec![0.0; sh.n * p];
                standardize_backward(&dhat, &hat, cache.bn_inv_std[c], &mut dx);
                for n in 0..sh.n {
                    let base = (n * sh.c + c) * p;
                    for (g, d) in x.grad[base..base + p]
                        .iter_mut()
                        .zip(&dx[n * p..(n + 1) * p])
                    {
                        *g += d;
                    }
                }
            } else {
                for n in 0..sh.n {
                    let base = (n * sh.c + c) * p;
                    for i in base..base + p {
                        x.grad[i] += dz[i] * cache.bn_inv_std[c];
                    }
                }
            }
        }
    }

    if s.mode.uses_group_branch() {
        let groups = s.groups();
        let per = sh.c / groups * p;
        if s.mode == NormMode::Additive {
            let dot: f64 = dz.iter().zip(&cache.gn_hat).map(|(d, h)| d * h).sum();
            s.grad_rho += cache.gate * (1.0 - cache.gate) * dot;
        }
        let scaled: Vec<f64> = dz.iter().map(|d| d * cache.gate).collect();
        for n in 0..sh.n {
            for g in 0..groups {
                let start = n * sh.c * p + g * per;
                standardize_backward(
                    &scaled[start..start + per],
                    &cache.gn_hat[start..start + per],
                    cache.gn_inv_std[n * groups + g],
                    &mut x.grad[start..start + per],
                );
            }
        }
    }
    Ok(())
}

/// Turns a batch-normalization layer into additive group normalization that
/// initially reproduces it: running statistics and affine parameters are kept
/// and only `rho` is added.
pub fn bn_to_agn_upgrade(bn: &NormState, groups: usize, rho_init: f64) -> Result<NormState> {
    if bn.mode != NormMode::Batch {
        return Err(Error::param(format!(
            "upgrade expects a bn layer, got {}",
            bn.mode
        )));
    }
    let mut s = NormState::additive(bn.channels, groups, rho_init)?;
    s.running_mean.clone_from(&bn.running_mean);
    s.running_var.clone_from(&bn.running_var);
    s.scale.clone_from(&bn.scale);
    s.shift.clone_from(&bn.shift);
    s.momentum = bn.momentum;
    s.eps = bn.eps;
    s.training = bn.training;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Shape4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape4, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(
            shape,
            (0..shape.len())
                .map(|_| rng.random_range(-2.0..3.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn training_batch_norm_standardizes_channels() {
        let x = random(Shape4::new(4, 3, 5, 5), 1);
        let mut s = NormState::batch(3).unwrap();
        let y = batch_norm(&x, &mut s).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            // eps shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor4::full(Shape4::new(2, 2, 3, 3), 4.2);
        let mut s = NormState::batch(2).unwrap();
        let y = batch_norm(&x, &mut s).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut s = NormState::batch(1).unwrap();
        s.training = false;
        s.running_mean = vec![1.0];
        s.running_var = vec![4.0];
        let y = batch_norm(&Tensor4::full(Shape4::new(1, 1, 1, 1), 3.0), &mut s).unwrap();
        assert!((y.data()[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        assert!((y.data()[0] - 1.0).abs() < 2e-6);
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut s = NormState::batch(1).unwrap();
        batch_norm(&x, &mut s).unwrap();
        assert!((s.running_mean[0] - 0.25).abs() < 1e-15);
        // unbiased variance 5/3
        assert!((s.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_needs_two_values() {
        let mut s = NormState::batch(2).unwrap();
        assert!(batch_norm(&Tensor4::zeros(Shape4::new(1, 2, 1, 1)), &mut s).is_err());
        s.training = false;
        assert!(batch_norm(&Tensor4::zeros(Shape4::new(1, 2, 1, 1)), &mut s).is_ok());
    }

    #[test]
    fn group_divisibility() {
        assert!(NormState::group(6, 4).is_err());
        assert!(NormState::additive(6, 0, 0.0).is_err());
        assert!(NormState::group(6, 3).is_ok());
        assert!(bn_to_agn_upgrade(&NormState::batch(6).unwrap(), 4, -10.0).is_err());
    }

    #[test]
    fn group_norm_standardizes_groups() {
        let x = random(Shape4::new(2, 4, 3, 3), 2);
        let mut s = NormState::group(4, 2).unwrap();
        let y = group_norm(&x, &mut s).unwrap();
        let per = 2 * 9;
        for chunk in y.data().chunks(per) {
            let mean = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let x = random(Shape4::new(2, 4, 2, 2), 3);
        assert!(batch_norm(&x, &mut NormState::group(4, 2).unwrap()).is_err());
        assert!(agn(&x, &mut NormState::batch(4).unwrap()).is_err());
        assert!(group_norm(&x, &mut NormState::batch(4).unwrap()).is_err());
        assert!(batch_norm(&x, &mut NormState::batch(3).unwrap()).is_err());
    }

    #[test]
    fn upgrade_copies_parameters() {
        let mut bn = NormState::batch(4).unwrap();
        bn.scale = vec![0.3, 1.7, -0.2, 1e-3];
        bn.shift = vec![0.1, 0.2, 0.3, 0.4];
        bn.running_mean = vec![1.0, 2.0, 3.0, 4.0];
        bn.running_var = vec![0.5, 0.6, 0.7, 0.8];
        let up = bn_to_agn_upgrade(&bn, 2, 0.0).unwrap();
        assert_eq!(up.mode, NormMode::Additive);
        assert_eq!(up.scale, bn.scale);
        assert_eq!(up.shift, bn.shift);
        assert_eq!(up.running_mean, bn.running_mean);
        assert_eq!(up.running_var, bn.running_var);
        assert_eq!(up.gate(), 0.5);
    }

    #[test]
    fn agn_is_affine_in_gate() {
        let x = random(Shape4::new(3, 4, 2, 2), 4);
        let eval = |rho: f64| {
            let mut s = NormState::additive(4, 2, rho).unwrap();
            agn(&x, &mut s).unwrap().into_data()
        };
        let (r0, r1, r2) = (-1.0, 0.5, 2.0);
        let (y0, y1, y2) = (eval(r0), eval(r1), eval(r2));
        let (g0, g1, g2) = (sigmoid(r0), sigmoid(r1), sigmoid(r2));
        let t = (g1 - g0) / (g2 - g0);
        for i in 0..y0.len() {
            assert!((y1[i] - (y0[i] + t * (y2[i] - y0[i]))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut x = random(Shape4::new(2, 4, 2, 2), 5);
        let mut s = NormState::additive(4, 2, 0.3).unwrap();
        let (y, cache) = forward(&x, &mut s).unwrap();
        norm_backward(&mut x, &mut s, &y, &cache).unwrap();
        assert!(x.grad.iter().all(|g| *g == 0.0));
        assert!(s.grad_scale.iter().chain(&s.grad_shift).all(|g| *g == 0.0));
        assert_eq!(s.grad_rho, 0.0);
    }
}
