//! Finite-difference verification of every hand-written backward pass.
//!
//! Each [`GradCase`] samples a random smooth instance of one operation,
//! flattening the input together with any parameters into a single point, so
//! one check covers input and parameter gradients at once. A [`GradSuite`] is
//! a named registry of cases; [`GradSuite::standard`] holds one per operation.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::gradcheck::DEFAULT_STEP;
use crate::diffcore::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, finite_diff_check,
    relu_backward, relu_forward, safe_div_backward, safe_div_forward, sigmoid_backward,
    sigmoid_forward, softmax_backward, softmax_forward, ConvFilter, Dense, Differentiable, FnOp,
    Padding, Shape4, Tensor4,
};
use crate::gvi::{gvi_backward, GviLayer, INPUT_CHANNELS};
use crate::loss::{
    combined_loss, combined_loss_backward, dice_loss, dice_loss_backward, focal_loss,
    focal_loss_backward, LossWeights,
};
use crate::metrics::LabelGrid;
use crate::norm::{self, NormMode, NormState};

pub const TRIALS: usize = 100;
pub const TOLERANCE: f64 = 1e-4;

/// One random instance: an operation, where to differentiate it, and the
/// upstream vector contracting its output.
pub struct Sample {
    pub op: Box<dyn Differentiable>,
    pub point: Vec<f64>,
    pub upstream: Vec<f64>,
}

pub trait GradCase: Send + Sync {
    fn name(&self) -> &str;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Sample;
}

/// A case backed by a plain sampling function.
pub struct FnCase {
    name: &'static str,
    sample: fn(&mut ChaCha8Rng) -> Sample,
}

impl FnCase {
    pub const fn new(name: &'static str, sample: fn(&mut ChaCha8Rng) -> Sample) -> Self {
        Self { name, sample }
    }
}

impl GradCase for FnCase {
    fn name(&self) -> &str {
        self.name
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Sample {
        (self.sample)(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

#[derive(Default)]
pub struct GradSuite {
    cases: Vec<Box<dyn GradCase>>,
}

impl GradSuite {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        let mut s = Self::empty();
        for case in STANDARD {
            s.register(Box::new(FnCase::new(case.name, case.sample)));
        }
        s
    }

    /// Adds a case, replacing any existing case of the same name.
    pub fn register(&mut self, case: Box<dyn GradCase>) {
        match self.cases.iter().position(|c| c.name() == case.name()) {
            Some(i) => self.cases[i] = case,
            None => self.cases.push(case),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Runs every case for `trials` random points. Case `i` draws from its own
    /// stream of the seeded generator, so reports do not depend on case order
    /// beyond the index.
    pub fn run(&self, seed: u64, trials: usize) -> Vec<CaseReport> {
        self.cases
            .iter()
            .enumerate()
            .map(|(i, case)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let worst = (0..trials)
                    .map(|_| {
                        let s = case.sample(&mut rng);
                        finite_diff_check(s.op.as_ref(), &s.point, &s.upstream, DEFAULT_STEP)
                    })
                    .fold(0.0, f64::max);
                CaseReport {
                    name: case.name().to_string(),
                    trials,
                    worst,
                }
            })
            .collect()
    }
}

const STANDARD: &[FnCase] = &[
    FnCase::new("conv2d_same", |r| conv_case(r, Padding::Same)),
    FnCase::new("conv2d_valid", |r| conv_case(r, Padding::Valid)),
    FnCase::new("safe_div", safe_div_case),
    FnCase::new("dense", dense_case),
    FnCase::new("relu", relu_case),
    FnCase::new("sigmoid", sigmoid_case),
    FnCase::new("softmax", softmax_case),
    FnCase::new("bn_train", |r| norm_case(r, NormMode::Batch, true)),
    FnCase::new("bn_eval", |r| norm_case(r, NormMode::Batch, false)),
    FnCase::new("gn_train", |r| norm_case(r, NormMode::Group, true)),
    FnCase::new("gn_eval", |r| norm_case(r, NormMode::Group, false)),
    FnCase::new("agn_train", |r| norm_case(r, NormMode::Additive, true)),
    FnCase::new("agn_eval", |r| norm_case(r, NormMode::Additive, false)),
    FnCase::new("gvi", gvi_case),
    FnCase::new("focal_loss", |r| loss_case(r, LossKind::Focal)),
    FnCase::new("dice_loss", |r| loss_case(r, LossKind::Dice)),
    FnCase::new("combined_loss", |r| loss_case(r, LossKind::Combined)),
];

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Magnitudes in `[lo, hi]` with random signs.
fn signed(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(lo..hi) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn tensor(shape: Shape4, v: &[f64]) -> Tensor4 {
    Tensor4::from_vec(shape, v.to_vec()).expect("sample sizes match their shapes")
}

/// Splits `v` into consecutive pieces of the given lengths.
fn pieces<'a>(v: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut rest = v;
    lens.iter()
        .map(|&n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        })
        .collect()
}

fn boxed<F, B>(forward: F, backward: B) -> Box<dyn Differentiable>
where
    F: Fn(&[f64]) -> Vec<f64> + 'static,
    B: Fn(&[f64], &[f64]) -> Vec<f64> + 'static,
{
    Box::new(FnOp::new(forward, backward))
}

fn conv_case(rng: &mut ChaCha8Rng, padding: Padding) -> Sample {
    let xs = Shape4::new(2, 2, 4, 5);
    let (c_out, k) = (3, 3);
    let wlen = c_out * xs.c * k * k;
    let lens = [xs.len(), wlen, c_out];
    let build = move |p: &[f64]| {
        let v = pieces(p, &lens);
        let f = ConvFilter::from_parts(c_out, xs.c, k, v[1].to_vec(), v[2].to_vec())
            .expect("filter sizes");
        (tensor(xs, v[0]), f)
    };
    let forward = move |p: &[f64]| {
        let (x, f) = build(p);
        conv2d_forward(&x, &f, padding)
            .expect("conv shapes")
            .into_data()
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let (mut x, mut f) = build(p);
        let mut out = conv2d_forward(&x, &f, padding).expect("conv shapes");
        out.grad.copy_from_slice(u);
        conv2d_backward(&mut x, &mut f, &out, padding).expect("conv shapes");
        [x.grad, f.grad_weight, f.grad_bias].concat()
    };
    let mut point = uniform(rng, xs.len(), -1.0, 1.0);
    point.extend(uniform(rng, wlen + c_out, -0.5, 0.5));
    let out_len = if padding == Padding::Same {
        xs.len() / xs.c * c_out
    } else {
        xs.n * c_out * 2 * 3
    };
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: uniform(rng, out_len, -1.0, 1.0),
    }
}

fn safe_div_case(rng: &mut ChaCha8Rng) -> Sample {
    let s = Shape4::new(1, 2, 3, 3);
    let n = s.len();
    let eps = 1e-6;
    let forward = move |p: &[f64]| {
        safe_div_forward(&tensor(s, &p[..n]), &tensor(s, &p[n..]), eps)
            .expect("shapes")
            .into_data()
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let (mut num, mut den) = (tensor(s, &p[..n]), tensor(s, &p[n..]));
        let mut out = safe_div_forward(&num, &den, eps).expect("shapes");
        out.grad.copy_from_slice(u);
        safe_div_backward(&mut num, &mut den, &out, eps).expect("shapes");
        [num.grad, den.grad].concat()
    };
    let mut point = uniform(rng, n, -2.0, 2.0);
    point.extend(signed(rng, n, 0.2, 2.0));
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: uniform(rng, n, -1.0, 1.0),
    }
}

fn dense_case(rng: &mut ChaCha8Rng) -> Sample {
    let xs = Shape4::new(2, 3, 2, 2);
    let outputs = 4;
    let lens = [xs.len(), outputs * xs.c, outputs];
    let build = move |p: &[f64]| {
        let v = pieces(p, &lens);
        (
            tensor(xs, v[0]),
            Dense::new(xs.c, outputs, v[1].to_vec(), v[2].to_vec()).expect("dense sizes"),
        )
    };
    let forward = move |p: &[f64]| {
        let (x, d) = build(p);
        dense_forward(&x, &d).expect("dense shapes").into_data()
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let (mut x, mut d) = build(p);
        let mut out = dense_forward(&x, &d).expect("dense shapes");
        out.grad.copy_from_slice(u);
        dense_backward(&mut x, &mut d, &out).expect("dense shapes");
        [x.grad, d.grad_weight, d.grad_bias].concat()
    };
    let point = uniform(rng, lens.iter().sum(), -1.0, 1.0);
    let upstream = uniform(rng, xs.len() / xs.c * outputs, -1.0, 1.0);
    Sample {
        op: boxed(forward, backward),
        point,
        upstream,
    }
}

type Unary = (
    fn(&Tensor4) -> Tensor4,
    fn(&mut Tensor4, &Tensor4) -> crate::Result<()>,
);

fn unary_case(rng: &mut ChaCha8Rng, s: Shape4, (fwd, bwd): Unary, point: Vec<f64>) -> Sample {
    let forward = move |p: &[f64]| fwd(&tensor(s, p)).into_data();
    let backward = move |p: &[f64], u: &[f64]| {
        let mut x = tensor(s, p);
        let mut out = fwd(&x);
        out.grad.copy_from_slice(u);
        bwd(&mut x, &out).expect("shapes");
        x.grad
    };
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: uniform(rng, s.len(), -1.0, 1.0),
    }
}

fn relu_case(rng: &mut ChaCha8Rng) -> Sample {
    let s = Shape4::new(2, 2, 3, 3);
    // magnitudes stay well clear of the kink at zero
    let point = signed(rng, s.len(), 0.01, 1.0);
    unary_case(rng, s, (relu_forward, relu_backward), point)
}

fn sigmoid_case(rng: &mut ChaCha8Rng) -> Sample {
    let s = Shape4::new(2, 2, 3, 3);
    let point = uniform(rng, s.len(), -4.0, 4.0);
    unary_case(rng, s, (sigmoid_forward, sigmoid_backward), point)
}

fn softmax_case(rng: &mut ChaCha8Rng) -> Sample {
    let s = Shape4::new(2, 4, 2, 3);
    let point = uniform(rng, s.len(), -3.0, 3.0);
    unary_case(rng, s, (softmax_forward, softmax_backward), point)
}

fn norm_case(rng: &mut ChaCha8Rng, mode: NormMode, training: bool) -> Sample {
    let xs = Shape4::new(3, 4, 3, 3);
    let c = xs.c;
    let mut base = NormState::new(mode, c, 2).expect("4 channels in 2 groups");
    base.training = training;
    base.running_mean = uniform(rng, c, -0.5, 0.5);
    base.running_var = uniform(rng, c, 0.5, 2.0);
    let with_rho = mode == NormMode::Additive;
    let lens = [xs.len(), c, c, usize::from(with_rho)];
    let build = move |p: &[f64]| {
        let v = pieces(p, &lens);
        let mut s = base.clone();
        s.scale = v[1].to_vec();
        s.shift = v[2].to_vec();
        if with_rho {
            s.rho = v[3][0];
        }
        (tensor(xs, v[0]), s)
    };
    let build2 = build.clone();
    let forward = move |p: &[f64]| {
        let (x, mut s) = build2(p);
        norm::forward(&x, &mut s)
            .expect("norm shapes")
            .0
            .into_data()
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let (mut x, mut s) = build(p);
        let (mut out, cache) = norm::forward(&x, &mut s).expect("norm shapes");
        out.grad.copy_from_slice(u);
        norm::norm_backward(&mut x, &mut s, &out, &cache).expect("norm shapes");
        let mut g = [x.grad, s.grad_scale, s.grad_shift].concat();
        if with_rho {
            g.push(s.grad_rho);
        }
        g
    };
    let mut point = uniform(rng, xs.len(), -2.0, 2.0);
    point.extend(signed(rng, c, 0.5, 1.5));
    point.extend(uniform(rng, c, -0.5, 0.5));
    if with_rho {
        point.push(rng.random_range(-2.0..2.0));
    }
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: uniform(rng, xs.len(), -1.0, 1.0),
    }
}

fn gvi_case(rng: &mut ChaCha8Rng) -> Sample {
    let xs = Shape4::new(1, INPUT_CHANNELS, 4, 4);
    let (m, k) = (2, 3);
    let wlen = m * INPUT_CHANNELS * k * k;
    let lens = [xs.len(), wlen, m, wlen, m];
    let build = move |p: &[f64]| {
        let v = pieces(p, &lens);
        let alpha = ConvFilter::from_parts(m, INPUT_CHANNELS, k, v[1].to_vec(), v[2].to_vec())
            .expect("sizes");
        let beta = ConvFilter::from_parts(m, INPUT_CHANNELS, k, v[3].to_vec(), v[4].to_vec())
            .expect("sizes");
        (
            tensor(xs, v[0]),
            GviLayer::new(alpha, beta, 1e-6).expect("matching filters"),
        )
    };
    let forward = move |p: &[f64]| {
        let (x, layer) = build(p);
        layer.forward_cached(&x).expect("nrgb input").0.into_data()
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let (mut x, mut layer) = build(p);
        let (mut out, cache) = layer.forward_cached(&x).expect("nrgb input");
        out.grad.copy_from_slice(u);
        gvi_backward(&mut layer, &mut x, &out, cache).expect("shapes");
        let GviLayer { alpha, beta, .. } = layer;
        [
            x.grad,
            alpha.grad_weight,
            alpha.grad_bias,
            beta.grad_weight,
            beta.grad_bias,
        ]
        .concat()
    };
    // denominators stay within [0.6, 1.4], far from the clip
    let mut point = uniform(rng, xs.len(), 0.0, 1.0);
    point.extend(uniform(rng, wlen + m, -0.5, 0.5));
    point.extend(uniform(rng, wlen, -0.1 / 9.0, 0.1 / 9.0));
    point.extend(uniform(rng, m, 0.9, 1.1));
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: uniform(rng, xs.len() / INPUT_CHANNELS * m, -1.0, 1.0),
    }
}

#[derive(Clone, Copy)]
enum LossKind {
    Focal,
    Dice,
    Combined,
}

/// Random probabilities and label sets. Multi-label pixels keep a clear
/// winner among their targets so `p_t` does not switch under perturbation.
fn loss_instance(rng: &mut ChaCha8Rng, s: Shape4) -> (Vec<f64>, Vec<LabelGrid>) {
    let p = s.plane();
    let mut probs = vec![0.0; s.len()];
    let mut grids = Vec::with_capacity(s.n);
    let classes: Vec<usize> = (0..s.c).collect();
    for n in 0..s.n {
        let mut labels = vec![0u32; p];
        let mut valid = vec![true; p];
        for pos in 0..p {
            let raw = uniform(rng, s.c, 0.1, 1.0);
            let total: f64 = raw.iter().sum();
            for c in 0..s.c {
                probs[(n * s.c + c) * p + pos] = raw[c] / total;
            }
            let count = rng.random_range(1..=2);
            let chosen: Vec<usize> = classes.choose_multiple(rng, count).copied().collect();
            if count == 2 {
                let gap = (raw[chosen[0]] - raw[chosen[1]]).abs() / total;
                if gap < 1e-3 {
                    labels[pos] = 1 << chosen[0];
                    continue;
                }
            }
            labels[pos] = chosen.iter().fold(0, |m, c| m | 1 << c);
            valid[pos] = pos == 0 || rng.random_bool(0.8);
        }
        grids
            .push(LabelGrid::new(s.w, s.h, s.c, labels, valid).expect("labels within class count"));
    }
    (probs, grids)
}

fn loss_case(rng: &mut ChaCha8Rng, kind: LossKind) -> Sample {
    let s = Shape4::new(2, 3, 3, 3);
    let (point, grids) = loss_instance(rng, s);
    let targets = grids.clone();
    let weights = LossWeights::default();
    let forward = move |p: &[f64]| {
        let probs = tensor(s, p);
        let v = match kind {
            LossKind::Focal => focal_loss(&probs, &targets, weights.focal_gamma),
            LossKind::Dice => dice_loss(&probs, &targets),
            LossKind::Combined => combined_loss(&probs, &targets, &weights),
        };
        vec![v.expect("positive probabilities")]
    };
    let backward = move |p: &[f64], u: &[f64]| {
        let mut probs = tensor(s, p);
        let r = match kind {
            LossKind::Focal => focal_loss_backward(&mut probs, &grids, weights.focal_gamma, u[0]),
            LossKind::Dice => dice_loss_backward(&mut probs, &grids, u[0]),
            LossKind::Combined => {
                let w = LossWeights {
                    focal: weights.focal * u[0],
                    dice: weights.dice * u[0],
                    ..weights
                };
                combined_loss_backward(&mut probs, &grids, &w)
            }
        };
        r.expect("positive probabilities");
        probs.grad
    };
    Sample {
        op: boxed(forward, backward),
        point,
        upstream: vec![rng.random_range(0.5..1.5)],
    }
}
