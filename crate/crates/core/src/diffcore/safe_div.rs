use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// `sign(d) * max(|d|, eps)` with `sign(0) = +1`.
#[inline]
pub fn clip_denominator(d: f64, eps: f64) -> f64 {
    let m = d.abs().max(eps);
    if d < 0.0 {
        -m
    } else {
        m
    }
}

#[inline]
fn clip_numerator(v: f64, eps: f64) -> f64 {
    let bound = 1.0 / eps;
    v.clamp(-bound, bound)
}

/// Elementwise `num' / den'` where the denominator is pushed away from zero to
/// magnitude `clip_eps` and the numerator is clamped to `±1 / clip_eps`.
pub fn safe_div_forward(num: &Tensor4, den: &Tensor4, clip_eps: f64) -> Result<Tensor4> {
    num.check_same_shape(den, "safe_div")?;
    if !(clip_eps > 0.0) {
        return Err(Error::param(format!(
            "clip_eps must be positive, got {clip_eps}"
        )));
    }
    let mut out = Tensor4::zeros(num.shape());
    for ((o, &a), &b) in out.data_mut().iter_mut().zip(num.data()).zip(den.data()) {
        *o = clip_numerator(a, clip_eps) / clip_denominator(b, clip_eps);
    }
    Ok(out)
}

/// Quotient-rule adjoint. Saturated operands (numerator beyond `1 / clip_eps`,
/// denominator inside `(-clip_eps, clip_eps)`) receive zero gradient.
pub fn safe_div_backward(
    num: &mut Tensor4,
    den: &mut Tensor4,
    out: &Tensor4,
    clip_eps: f64,
) -> Result<()> {
    num.check_same_shape(den, "safe_div")?;
    num.check_same_shape(out, "safe_div upstream")?;
    let bound = 1.0 / clip_eps;
    let (nd, ng) = num.split_mut();
    let (dd, dg) = den.split_mut();
    for i in 0..out.grad.len() {
        let up = out.grad[i];
        let d = clip_denominator(dd[i], clip_eps);
        let a = clip_numerator(nd[i], clip_eps);
        if nd[i].abs() <= bound {
            ng[i] += up / d;
        }
        if dd[i].abs() >= clip_eps {
            dg[i] -= up * a / (d * d);
        }
    }
    Ok(())
}
