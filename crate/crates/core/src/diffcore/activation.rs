use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut out = Tensor4::zeros(x.shape());
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = v.max(0.0);
    }
    out
}

/// Subgradient 0 at the kink.
pub fn relu_backward(x: &mut Tensor4, out: &Tensor4) -> Result<()> {
    x.check_same_shape(out, "relu")?;
    let (xd, xg) = x.split_mut();
    for ((g, &v), &u) in xg.iter_mut().zip(xd.iter()).zip(&out.grad) {
        if v > 0.0 {
            *g += u;
        }
    }
    Ok(())
}

pub fn sigmoid_forward(x: &Tensor4) -> Tensor4 {
    let mut out = Tensor4::zeros(x.shape());
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = sigmoid(v);
    }
    out
}

/// Uses the forward output: `d sigma = sigma (1 - sigma)`.
pub fn sigmoid_backward(x: &mut Tensor4, out: &Tensor4) -> Result<()> {
    x.check_same_shape(out, "sigmoid")?;
    for ((g, &s), &u) in x.grad.iter_mut().zip(out.data()).zip(&out.grad) {
        *g += u * s * (1.0 - s);
    }
    Ok(())
}

/// Softmax over the channel axis at every `(n, h, w)`.
pub fn softmax_forward(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let p = s.plane();
    let mut out = Tensor4::zeros(s);
    let od = out.data_mut();
    for n in 0..s.n {
        for pos in 0..p {
            let idx = |c: usize| (n * s.c + c) * p + pos;
            let m = (0..s.c)
                .map(|c| x.data()[idx(c)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..s.c {
                let e = (x.data()[idx(c)] - m).exp();
                od[idx(c)] = e;
                z += e;
            }
            for c in 0..s.c {
                od[idx(c)] /= z;
            }
        }
    }
    out
}

pub fn softmax_backward(x: &mut Tensor4, out: &Tensor4) -> Result<()> {
    x.check_same_shape(out, "softmax")?;
    let s = x.shape();
    if s.c == 0 {
        return Err(Error::shape("softmax over zero channels"));
    }
    let p = s.plane();
    for n in 0..s.n {
        for pos in 0..p {
            let idx = |c: usize| (n * s.c + c) * p + pos;
            let dot: f64 = (0..s.c)
                .map(|c| out.grad[idx(c)] * out.data()[idx(c)])
                .sum();
            for c in 0..s.c {
                let i = idx(c);
                x.grad[i] += out.data()[i] * (out.grad[i] - dot);
            }
        }
    }
    Ok(())
}
