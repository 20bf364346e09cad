//! Learnable vegetation index: a clipped ratio of two convolutions over NRGB input.
//!
//! With 1x1 kernels each output channel is `(a0 + a . x) / (b0 + b . x)` over
//! the pixel's (NIR, R, G, B) values, which covers NDVI, SAVI, EVI and the other
//! ratio-shaped indices exactly (see [`express_vi`]). Larger odd kernels mix in
//! each pixel's neighbourhood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{
    conv2d_backward, conv2d_forward, safe_div_backward, safe_div_forward, ConvFilter, Padding,
    Parameterized, Tensor4,
};
use crate::error::{Error, Result};
use crate::indices::{registry, ViKind, ViParams};

pub const INPUT_CHANNELS: usize = 4;
pub const DEFAULT_CHANNELS: usize = 12;
pub const DEFAULT_KERNEL: usize = 1;
pub const DEFAULT_CLIP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GviLayer {
    /// Numerator kernels.
    pub alpha: ConvFilter,
    /// Denominator kernels.
    pub beta: ConvFilter,
    pub clip_eps: f64,
}

/// Numerator and denominator responses from the forward pass.
#[derive(Debug, Clone)]
pub struct GviCache {
    num: Tensor4,
    den: Tensor4,
}

impl GviLayer {
    pub fn new(alpha: ConvFilter, beta: ConvFilter, clip_eps: f64) -> Result<Self> {
        let same = alpha.c_out() == beta.c_out()
            && alpha.c_in() == beta.c_in()
            && alpha.kernel() == beta.kernel();
        if !same {
            return Err(Error::shape(
                "numerator and denominator filters differ in shape",
            ));
        }
        if alpha.c_in() != INPUT_CHANNELS {
            return Err(Error::shape(format!(
                "GVI filters take {INPUT_CHANNELS} input channels, got {}",
                alpha.c_in()
            )));
        }
        if !(clip_eps > 0.0) {
            return Err(Error::param(format!(
                "clip_eps must be positive, got {clip_eps}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            clip_eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.alpha.c_out()
    }

    pub fn kernel(&self) -> usize {
        self.alpha.kernel()
    }

    pub fn forward_cached(&self, x: &Tensor4) -> Result<(Tensor4, GviCache)> {
        if x.shape().c != INPUT_CHANNELS {
            return Err(Error::shape(format!(
                "GVI expects NRGB input, got {} channels",
                x.shape().c
            )));
        }
        let num = conv2d_forward(x, &self.alpha, Padding::Same)?;
        let den = conv2d_forward(x, &self.beta, Padding::Same)?;
        let out = safe_div_forward(&num, &den, self.clip_eps)?;
        Ok((out, GviCache { num, den }))
    }

    pub fn zero_grad(&mut self) {
        self.alpha.zero_grad();
        self.beta.zero_grad();
    }
}

impl Parameterized for GviLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.alpha.weight, &mut self.alpha.grad_weight);
        f(&mut self.alpha.bias, &mut self.alpha.grad_bias);
        f(&mut self.beta.weight, &mut self.beta.grad_weight);
        f(&mut self.beta.bias, &mut self.beta.grad_bias);
    }
}

pub fn gvi_forward(layer: &GviLayer, x: &Tensor4) -> Result<Tensor4> {
    layer.forward_cached(x).map(|(y, _)| y)
}

/// Accumulates gradients into both filters and into `x.grad`, reading the
/// upstream gradient from `out.grad`.
pub fn gvi_backward(
    layer: &mut GviLayer,
    x: &mut Tensor4,
    out: &Tensor4,
    cache: GviCache,
) -> Result<()> {
    let GviCache { mut num, mut den } = cache;
    if out.shape() != num.shape() {
        return Err(Error::shape(format!(
            "upstream {} vs GVI output {}",
            out.shape(),
            num.shape()
        )));
    }
    safe_div_backward(&mut num, &mut den, out, layer.clip_eps)?;
    // conv backward reads the upstream gradient from the output's grad buffer
    conv2d_backward(x, &mut layer.alpha, &num, Padding::Same)?;
    conv2d_backward(x, &mut layer.beta, &den, Padding::Same)?;
    Ok(())
}

/// Random layer whose denominators start near one.
///
/// Numerator kernels are uniform in `±0.1`. Denominator kernels have bias 1 and
/// weights uniform in `±0.1 / k²`, so for inputs in `[0, 1]` every denominator
/// lies in `[0.6, 1.4]`. With `seed_ndvi`, output channel 0 starts as exact NDVI.
pub fn gvi_init(channels: usize, kernel: usize, seed: u64, seed_ndvi: bool) -> Result<GviLayer> {
    if channels == 0 {
        return Err(Error::param("GVI needs at least one output channel"));
    }
    if kernel % 2 == 0 {
        return Err(Error::param(format!(
            "GVI kernel must be odd, got {kernel}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = ConvFilter::zeros(channels, INPUT_CHANNELS, kernel)?;
    let mut beta = ConvFilter::zeros(channels, INPUT_CHANNELS, kernel)?;
    for w in &mut alpha.weight {
        *w = rng.random_range(-0.1..0.1);
    }
    let bscale = 0.1 / (kernel * kernel) as f64;
    for w in &mut beta.weight {
        *w = rng.random_range(-bscale..bscale);
    }
    beta.bias.iter_mut().for_each(|b| *b = 1.0);
    if seed_ndvi {
        let ndvi = registry()
            .get(ViKind::Ndvi)
            .and_then(|i| i.rational_form(&ViParams::default()))
            .expect("ndvi");
        set_pixelwise(&mut alpha, 0, &ndvi.numerator);
        set_pixelwise(&mut beta, 0, &ndvi.denominator);
    }
    GviLayer::new(alpha, beta, DEFAULT_CLIP_EPS)
}

/// Writes `[bias, nir, r, g, b]` into the centre tap of output channel `co`, zeroing the other taps.
fn set_pixelwise(f: &mut ConvFilter, co: usize, coeffs: &[f64; 5]) {
    let k = f.kernel();
    let centre = k / 2;
    for ci in 0..INPUT_CHANNELS {
        for ky in 0..k {
            for kx in 0..k {
                let idx = f.weight_index(co, ci, ky, kx);
                f.weight[idx] = if ky == centre && kx == centre {
                    coeffs[ci + 1]
                } else {
                    0.0
                };
            }
        }
    }
    f.bias[co] = coeffs[0];
}

/// Fixed single-channel 1x1 layer reproducing a ratio-shaped index.
pub fn express_vi(kind: ViKind, params: &ViParams) -> Result<GviLayer> {
    params.validate()?;
    let form = registry()
        .get(kind)
        .and_then(|i| i.rational_form(params))
        .ok_or_else(|| Error::NotExpressible(kind.to_string()))?;
    let mut alpha = ConvFilter::zeros(1, INPUT_CHANNELS, 1)?;
    let mut beta = ConvFilter::zeros(1, INPUT_CHANNELS, 1)?;
    set_pixelwise(&mut alpha, 0, &form.numerator);
    set_pixelwise(&mut beta, 0, &form.denominator);
    GviLayer::new(alpha, beta, params.clip_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Shape4;
    use crate::indices::compute_vi;
    use crate::raster::{Nrgb, NrgbImage};

    fn random_input(n: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape4::new(n, 4, h, w);
        Tensor4::from_vec(
            s,
            (0..s.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_filters_give_ones() {
        let layer = gvi_init(3, 3, 1, false).unwrap();
        let same = GviLayer::new(layer.beta.clone(), layer.beta.clone(), 1e-6).unwrap();
        let y = gvi_forward(&same, &random_input(2, 5, 5, 2)).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ndvi_weights_on_a_pixel() {
        let layer = express_vi(ViKind::Ndvi, &ViParams::default()).unwrap();
        let x = NrgbImage::uniform(1, 1, Nrgb::new(0.8, 0.2, 0.5, 0.1))
            .unwrap()
            .to_tensor();
        assert!((gvi_forward(&layer, &x).unwrap().data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn savi_weights_on_a_pixel() {
        let layer = express_vi(ViKind::Savi, &ViParams::default()).unwrap();
        let x = NrgbImage::uniform(1, 1, Nrgb::new(0.8, 0.2, 0.5, 0.1))
            .unwrap()
            .to_tensor();
        assert!((gvi_forward(&layer, &x).unwrap().data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_filter_stays_finite() {
        let mut layer = gvi_init(2, 1, 3, false).unwrap();
        layer.beta.weight.iter_mut().for_each(|w| *w = 0.0);
        layer.beta.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = random_input(1, 3, 3, 4);
        let num = conv2d_forward(&x, &layer.alpha, Padding::Same).unwrap();
        let y = gvi_forward(&layer, &x).unwrap();
        for (a, b) in y.data().iter().zip(num.data()) {
            assert!(a.is_finite());
            assert!((a - b / 1e-6).abs() <= 1e-6 * a.abs());
        }
    }

    #[test]
    fn channel_count_checked() {
        let layer = gvi_init(1, 1, 0, false).unwrap();
        assert!(gvi_forward(&layer, &Tensor4::zeros(Shape4::new(1, 3, 2, 2))).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut layer = gvi_init(2, 3, 5, false).unwrap();
        let mut x = random_input(1, 4, 4, 6);
        let (y, cache) = layer.forward_cached(&x).unwrap();
        gvi_backward(&mut layer, &mut x, &y, cache).unwrap();
        let mut all_zero = x.grad.iter().all(|g| *g == 0.0);
        layer.visit_params(&mut |_, g| all_zero &= g.iter().all(|v| *v == 0.0));
        assert!(all_zero);
    }

    #[test]
    fn unit_denominator_reduces_to_plain_convolution() {
        let mut layer = gvi_init(2, 3, 7, false).unwrap();
        layer.beta.weight.iter_mut().for_each(|w| *w = 0.0);
        layer.beta.bias.iter_mut().for_each(|b| *b = 1.0);
        let mut x = random_input(1, 4, 4, 8);
        let (mut y, cache) = layer.forward_cached(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        y.grad = (0..y.shape().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        gvi_backward(&mut layer, &mut x, &y, cache).unwrap();

        let mut x2 = x.clone();
        x2.zero_grad();
        let mut plain = layer.alpha.clone();
        plain.zero_grad();
        let mut y2 = conv2d_forward(&x2, &plain, Padding::Same).unwrap();
        y2.grad = y.grad.clone();
        conv2d_backward(&mut x2, &mut plain, &y2, Padding::Same).unwrap();
        for (a, b) in layer.alpha.grad_weight.iter().zip(&plain.grad_weight) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in x.grad.iter().zip(&x2.grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_and_well_conditioned() {
        assert_eq!(
            gvi_init(12, 3, 42, true).unwrap(),
            gvi_init(12, 3, 42, true).unwrap()
        );
        for k in [1, 3, 5] {
            let layer = gvi_init(12, k, 11, false).unwrap();
            let x = random_input(2, 8, 8, 12);
            let den = conv2d_forward(&x, &layer.beta, Padding::Same).unwrap();
            assert!(
                den.data().iter().all(|d| (0.5..=1.5).contains(d)),
                "k = {k}"
            );
        }
        assert!(gvi_init(0, 1, 0, false).is_err());
        assert!(gvi_init(1, 2, 0, false).is_err());
    }

    #[test]
    fn ndvi_seeded_channel_matches_index() {
        let layer = gvi_init(4, 3, 13, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let planes = [0, 1, 2, 3].map(|_| {
            (0..64)
                .map(|_| rng.random_range(0.01..1.0))
                .collect::<Vec<f64>>()
        });
        let img = NrgbImage::from_planes(8, 8, planes).unwrap();
        let y = gvi_forward(&layer, &img.to_tensor()).unwrap();
        let ndvi = compute_vi(ViKind::Ndvi, &img, &ViParams::default()).unwrap();
        for (a, b) in y.plane(0, 0).iter().zip(&ndvi.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn non_ratio_indices_rejected() {
        for kind in [ViKind::Msavi2, ViKind::Mcari, ViKind::Vci] {
            assert!(matches!(
                express_vi(kind, &ViParams::default()),
                Err(Error::NotExpressible(_))
            ));
        }
        assert!(express_vi(ViKind::Gdvi, &ViParams::default()).is_ok());
    }
}
