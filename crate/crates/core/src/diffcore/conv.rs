use rand::Rng;

use super::tensor::{Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; output keeps the input's height and width.
    Same,
    /// No padding; output shrinks by `k - 1` in each spatial dimension.
    Valid,
}

/// Convolution kernels `[c_out, c_in, k, k]` with a per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    c_out: usize,
    c_in: usize,
    k: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl ConvFilter {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd, got {k}")));
        }
        if c_out == 0 || c_in == 0 {
            return Err(Error::param(
                "filter needs at least one input and output channel",
            ));
        }
        let n = c_out * c_in * k * k;
        Ok(Self {
            c_out,
            c_in,
            k,
            weight: vec![0.0; n],
            bias: vec![0.0; c_out],
            grad_weight: vec![0.0; n],
            grad_bias: vec![0.0; c_out],
        })
    }

    pub fn from_parts(
        c_out: usize,
        c_in: usize,
        k: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut f = Self::zeros(c_out, c_in, k)?;
        if weight.len() != f.weight.len() || bias.len() != c_out {
            return Err(Error::shape(format!(
                "filter [{c_out}, {c_in}, {k}, {k}] given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        f.weight = weight;
        f.bias = bias;
        Ok(f)
    }

    /// Uniform weights in `±sqrt(6 / fan_in)` scaled by `gain`; zero bias.
    pub fn random<R: Rng + ?Sized>(
        c_out: usize,
        c_in: usize,
        k: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut f = Self::zeros(c_out, c_in, k)?;
        let bound = gain * (6.0 / (c_in * k * k) as f64).sqrt();
        for w in &mut f.weight {
            *w = rng.random_range(-bound..bound);
        }
        Ok(f)
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.c_in + ci) * self.k + ky) * self.k + kx
    }

    pub fn weight_at(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weight[self.weight_index(co, ci, ky, kx)]
    }

    /// Kernel slice `[k, k]` for one (output, input) channel pair.
    pub fn kernel_slice(&self, co: usize, ci: usize) -> &[f64] {
        let start = self.weight_index(co, ci, 0, 0);
        &self.weight[start..start + self.k * self.k]
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn output_shape(&self, input: Shape4, padding: Padding) -> Result<Shape4> {
        if input.c != self.c_in {
            return Err(Error::shape(format!(
                "input has {} channels, filter expects {}",
                input.c, self.c_in
            )));
        }
        match padding {
            Padding::Same => Ok(input.with_channels(self.c_out)),
            Padding::Valid => {
                if input.h < self.k || input.w < self.k {
                    return Err(Error::shape(format!(
                        "{}x{} input smaller than {}x{} kernel",
                        input.h, input.w, self.k, self.k
                    )));
                }
                Ok(Shape4::new(
                    input.n,
                    self.c_out,
                    input.h - self.k + 1,
                    input.w - self.k + 1,
                ))
            }
        }
    }

    fn pad(&self, padding: Padding) -> isize {
        match padding {
            Padding::Same => (self.k / 2) as isize,
            Padding::Valid => 0,
        }
    }
}

/// Output column range `[lo, hi)` for which `ox + offset` lands inside `0..in_w`.
#[inline]
fn overlap(out_len: usize, in_len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (in_len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

/// Cross-correlation (no kernel flip) plus bias.
pub fn conv2d_forward(x: &Tensor4, f: &ConvFilter, padding: Padding) -> Result<Tensor4> {
    let is = x.shape();
    let os = f.output_shape(is, padding)?;
    let pad = f.pad(padding);
    let mut out = Tensor4::zeros(os);
    let (ip, op) = (is.plane(), os.plane());
    let k = f.k;
    let data = out.data_mut();
    for n in 0..is.n {
        for co in 0..f.c_out {
            let o = &mut data[(n * os.c + co) * op..(n * os.c + co + 1) * op];
            o.iter_mut().for_each(|v| *v = f.bias[co]);
            for ci in 0..f.c_in {
                let inp = &x.data()[(n * is.c + ci) * ip..(n * is.c + ci + 1) * ip];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y_lo, y_hi) = overlap(os.h, is.h, dy);
                    for kx in 0..k {
                        let wv = f.weight[((co * f.c_in + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let (x_lo, x_hi) = overlap(os.w, is.w, dx);
                        for oy in y_lo..y_hi {
                            let iy = (oy as isize + dy) as usize;
                            let orow = &mut o[oy * os.w + x_lo..oy * os.w + x_hi];
                            let start = (iy * is.w) as isize + x_lo as isize + dx;
                            let irow = &inp[start as usize..start as usize + (x_hi - x_lo)];
                            for (ov, iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_backward_impl(
    x: &mut Tensor4,
    f: &mut ConvFilter,
    out: &Tensor4,
    padding: Padding,
    input_grad: bool,
) -> Result<()> {
    let is = x.shape();
    let os = f.output_shape(is, padding)?;
    if out.shape() != os {
        return Err(Error::shape(format!(
            "upstream {} vs forward output {os}",
            out.shape()
        )));
    }
    let pad = f.pad(padding);
    let (ip, op) = (is.plane(), os.plane());
    let k = f.k;
    let (xdata, xgrad) = x.split_mut();
    for n in 0..is.n {
        for co in 0..f.c_out {
            let up = &out.grad[(n * os.c + co) * op..(n * os.c + co + 1) * op];
            f.grad_bias[co] += up.iter().sum::<f64>();
            for ci in 0..f.c_in {
                let base = (n * is.c + ci) * ip;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y_lo, y_hi) = overlap(os.h, is.h, dy);
                    for kx in 0..k {
                        let widx = ((co * f.c_in + ci) * k + ky) * k + kx;
                        let wv = f.weight[widx];
                        let dx = kx as isize - pad;
                        let (x_lo, x_hi) = overlap(os.w, is.w, dx);
                        let mut gw = 0.0;
                        for oy in y_lo..y_hi {
                            let iy = (oy as isize + dy) as usize;
                            let urow = &up[oy * os.w + x_lo..oy * os.w + x_hi];
                            let start = base + ((iy * is.w) as isize + x_lo as isize + dx) as usize;
                            let len = x_hi - x_lo;
                            let irow = &xdata[start..start + len];
                            gw += urow.iter().zip(irow).map(|(u, i)| u * i).sum::<f64>();
                            if input_grad {
                                let grow = &mut xgrad[start..start + len];
                                for (g, u) in grow.iter_mut().zip(urow) {
                                    *g += wv * u;
                                }
                            }
                        }
                        f.grad_weight[widx] += gw;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Accumulates `d out / d x` into `x.grad` and the kernel/bias gradients into `f`,
/// reading the upstream gradient from `out.grad`.
pub fn conv2d_backward(
    x: &mut Tensor4,
    f: &mut ConvFilter,
    out: &Tensor4,
    padding: Padding,
) -> Result<()> {
    conv2d_backward_impl(x, f, out, padding, true)
}

/// Parameter gradients only, for layers whose input needs no gradient.
pub(crate) fn conv2d_backward_params(
    x: &mut Tensor4,
    f: &mut ConvFilter,
    out: &Tensor4,
    padding: Padding,
) -> Result<()> {
    conv2d_backward_impl(x, f, out, padding, false)
}

/// Inserts a new input channel at `new_position` whose kernels copy those of
/// `source_channel`. Used to widen a pretrained first layer (e.g. RGB to NRGB
/// by seeding the NIR slot from the red kernels).
pub fn extend_input_channels(
    f: &ConvFilter,
    source_channel: usize,
    new_position: usize,
) -> Result<ConvFilter> {
    if source_channel >= f.c_in {
        return Err(Error::param(format!(
            "source channel {source_channel} out of range for {} inputs",
            f.c_in
        )));
    }
    if new_position > f.c_in {
        return Err(Error::param(format!(
            "insert position {new_position} out of range for {} inputs",
            f.c_in
        )));
    }
    let kk = f.k * f.k;
    let mut weight = Vec::with_capacity(f.c_out * (f.c_in + 1) * kk);
    for co in 0..f.c_out {
        for ci in 0..=f.c_in {
            let src = match ci.cmp(&new_position) {
                std::cmp::Ordering::Less => ci,
                std::cmp::Ordering::Equal => source_channel,
                std::cmp::Ordering::Greater => ci - 1,
            };
            weight.extend_from_slice(f.kernel_slice(co, src));
        }
    }
    ConvFilter::from_parts(f.c_out, f.c_in + 1, f.k, weight, f.bias.clone())
}
