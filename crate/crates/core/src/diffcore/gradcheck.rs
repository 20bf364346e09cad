//! Central finite differences against analytic vector-Jacobian products.

/// A function `R^n -> R^m` with an analytic adjoint.
pub trait Differentiable {
    fn forward(&self, input: &[f64]) -> Vec<f64>;

    /// `J(input)^T upstream`.
    fn vjp(&self, input: &[f64], upstream: &[f64]) -> Vec<f64>;
}

/// Closure-backed [`Differentiable`].
pub struct FnOp<F, B> {
    forward: F,
    backward: B,
}

impl<F, B> FnOp<F, B>
where
    F: Fn(&[f64]) -> Vec<f64>,
    B: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    pub fn new(forward: F, backward: B) -> Self {
        Self { forward, backward }
    }
}

impl<F, B> Differentiable for FnOp<F, B>
where
    F: Fn(&[f64]) -> Vec<f64>,
    B: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        (self.forward)(input)
    }

    fn vjp(&self, input: &[f64], upstream: &[f64]) -> Vec<f64> {
        (self.backward)(input, upstream)
    }
}

/// Gradient magnitudes below this are compared in absolute terms.
pub const SCALE_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Worst per-coordinate relative discrepancy between the analytic gradient of
/// `upstream . op(x)` and its central difference at `point`.
///
/// Each coordinate's error is `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn finite_diff_check(op: &dyn Differentiable, point: &[f64], upstream: &[f64], h: f64) -> f64 {
    let analytic = op.vjp(point, upstream);
    assert_eq!(
        analytic.len(),
        point.len(),
        "vjp must return one entry per input"
    );
    let objective = |x: &[f64]| -> f64 {
        let y = op.forward(x);
        assert_eq!(y.len(), upstream.len(), "upstream must match output length");
        y.iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = objective(&x);
        x[i] = orig - h;
        let minus = objective(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        if !err.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}
