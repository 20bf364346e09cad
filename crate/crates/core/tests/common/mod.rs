//! Test-side reference implementations, written from the index table and the
//! textbook normalization formulas without touching library internals.

#![allow(dead_code)]

use vifuse::raster::NrgbImage;

/// `d` pushed away from zero to at least `eps`, keeping its sign (zero counts as positive).
pub fn clip(d: f64, eps: f64) -> f64 {
    if d.abs() >= eps {
        d
    } else if d < 0.0 {
        -eps
    } else {
        eps
    }
}

pub struct Px {
    pub nir: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

pub struct Constants {
    pub gamma: f64,
    pub savi_l: f64,
    pub ndvi_min: f64,
    pub ndvi_max: f64,
    pub eps: f64,
}

/// Scalar evaluation of one index by its lowercase name.
pub fn scalar_vi(name: &str, p: &Px, c: &Constants) -> f64 {
    let e = c.eps;
    let (nir, r, g, b) = (p.nir, p.r, p.g, p.b);
    let ndvi = (nir - r) / clip(nir + r, e);
    match name {
        "ndvi" => ndvi,
        "iavi" => {
            let t = r - c.gamma * (b - r);
            (nir - t) / clip(nir + t, e)
        }
        "msavi2" => {
            let s = (2.0 * nir + 1.0).powi(2) - 8.0 * (nir - r);
            0.5 * ((2.0 * nir + 1.0) - s.max(0.0).sqrt())
        }
        "evi" => 2.5 * (nir - r) / clip(nir + 6.0 * r - 7.5 * b + 1.0, e),
        "vdvi" => 2.0 * (2.0 * g - r - b) / clip(2.0 * g + r + b, e),
        "wdrvi" => (0.2 * nir - r) / clip(0.2 * nir + r, e),
        "mcari" => {
            let s = (2.0 * nir + 1.0).powi(2) - (6.0 * nir - 5.0 * r) - 0.5;
            1.5 * (2.5 * (nir - r) - 1.3 * (nir - g)) / clip(s.max(0.0).sqrt(), e)
        }
        "gdvi" => nir - g,
        "savi" => (1.0 + c.savi_l) * (nir - r) / clip(nir + r + c.savi_l, e),
        "rvi" => r / clip(nir, e),
        "vci" => (ndvi - c.ndvi_min) / clip(c.ndvi_max + c.ndvi_min, e),
        "grvi" => nir / clip(g, e),
        "ndgi" => (g - r) / clip(g + r, e),
        other => panic!("no oracle for {other}"),
    }
}

pub fn pixels(img: &NrgbImage) -> Vec<Px> {
    (0..img.len())
        .map(|i| Px {
            nir: img.plane(0)[i],
            r: img.plane(1)[i],
            g: img.plane(2)[i],
            b: img.plane(3)[i],
        })
        .collect()
}

/// Normalizes each of `sets` (lists of flat indices into `x`) to zero mean and
/// unit biased variance.
pub fn normalize_sets(x: &[f64], sets: &[Vec<usize>], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for set in sets {
        let n = set.len() as f64;
        let mean = set.iter().map(|&i| x[i]).sum::<f64>() / n;
        let var = set.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / n;
        for &i in set {
            out[i] = (x[i] - mean) / (var + eps).sqrt();
        }
    }
    out
}

/// Index sets for NCHW data: one per (sample, channel) for instance
/// normalization, one per sample for layer normalization, one per channel for
/// batch normalization.
pub fn instance_sets(n: usize, c: usize, plane: usize) -> Vec<Vec<usize>> {
    (0..n * c)
        .map(|nc| (nc * plane..(nc + 1) * plane).collect())
        .collect()
}

pub fn layer_sets(n: usize, c: usize, plane: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|s| (s * c * plane..(s + 1) * c * plane).collect())
        .collect()
}

pub fn batch_sets(n: usize, c: usize, plane: usize) -> Vec<Vec<usize>> {
    (0..c)
        .map(|ch| {
            (0..n)
                .flat_map(|s| {
                    let start = (s * c + ch) * plane;
                    start..start + plane
                })
                .collect()
        })
        .collect()
}

/// Single-label IoU per class from a full confusion matrix; `None` for classes
/// absent from both prediction and target.
pub fn confusion_iou(pred: &[usize], target: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(target) {
        m[t][p] += 1;
    }
    (0..classes)
        .map(|k| {
            let tp = m[k][k];
            let row: u64 = m[k].iter().sum();
            let col: u64 = (0..classes).map(|t| m[t][k]).sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

/// Pearson correlation of two equal-length columns.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Writes `<stem>_rgb.png`, `<stem>_nir.png` and `<stem>_mask.png` at 8 bits.
pub fn save_pair(img: &NrgbImage, dir: &std::path::Path, stem: &str) {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let rgb: Vec<u8> = (0..img.len())
        .flat_map(|i| [q(img.plane(1)[i]), q(img.plane(2)[i]), q(img.plane(3)[i])])
        .collect();
    image::RgbImage::from_raw(w, h, rgb)
        .unwrap()
        .save(dir.join(format!("{stem}_rgb.png")))
        .unwrap();
    let nir: Vec<u8> = img.plane(0).iter().map(|&v| q(v)).collect();
    image::GrayImage::from_raw(w, h, nir)
        .unwrap()
        .save(dir.join(format!("{stem}_nir.png")))
        .unwrap();
    let mask: Vec<u8> = img
        .valid()
        .iter()
        .map(|&v| if v { 255 } else { 0 })
        .collect();
    image::GrayImage::from_raw(w, h, mask)
        .unwrap()
        .save(dir.join(format!("{stem}_mask.png")))
        .unwrap();
}
