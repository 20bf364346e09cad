//! Four-channel NRGB imagery.
//!
//! Planes are stored in the fixed order NIR, R, G, B with values scaled into
//! `[0, 1]`. Invalid pixels stay in the arrays; anything that aggregates over
//! pixels must consult [`NrgbImage::valid`].

use std::path::Path;

use image::{DynamicImage, GenericImageView};

use crate::diffcore::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Channel positions inside an [`NrgbImage`] and inside every tensor built from one.
pub const NIR: usize = 0;
pub const RED: usize = 1;
pub const GREEN: usize = 2;
pub const BLUE: usize = 3;

pub const CHANNEL_NAMES: [&str; 4] = ["nir", "red", "green", "blue"];

/// One pixel's reflectances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nrgb {
    pub nir: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Nrgb {
    pub fn new(nir: f64, r: f64, g: f64, b: f64) -> Self {
        Self { nir, r, g, b }
    }

    pub fn channel(&self, c: usize) -> f64 {
        match c {
            NIR => self.nir,
            RED => self.r,
            GREEN => self.g,
            BLUE => self.b,
            _ => panic!("channel index {c} out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrgbImage {
    width: usize,
    height: usize,
    planes: [Vec<f64>; 4],
    valid: Vec<bool>,
}

impl NrgbImage {
    /// Builds an image from planes in (NIR, R, G, B) order, checking every invariant.
    pub fn new(
        width: usize,
        height: usize,
        planes: [Vec<f64>; 4],
        valid: Vec<bool>,
    ) -> Result<Self> {
        let len = width * height;
        if len == 0 {
            return Err(Error::Empty("image has zero pixels".into()));
        }
        for (name, plane) in CHANNEL_NAMES.iter().zip(planes.iter()) {
            if plane.len() != len {
                return Err(Error::Dimension(format!(
                    "{name} plane has {} values, expected {width}x{height}",
                    plane.len()
                )));
            }
            if let Some(v) = plane
                .iter()
                .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
            {
                return Err(Error::param(format!(
                    "{name} plane value {v} outside [0, 1]"
                )));
            }
        }
        if valid.len() != len {
            return Err(Error::Dimension(format!(
                "mask has {} entries, expected {width}x{height}",
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            planes,
            valid,
        })
    }

    /// All pixels valid.
    pub fn from_planes(width: usize, height: usize, planes: [Vec<f64>; 4]) -> Result<Self> {
        Self::new(width, height, planes, vec![true; width * height])
    }

    /// Image whose every pixel has the same reflectances.
    pub fn uniform(width: usize, height: usize, px: Nrgb) -> Result<Self> {
        let n = width * height;
        Self::from_planes(
            width,
            height,
            [vec![px.nir; n], vec![px.r; n], vec![px.g; n], vec![px.b; n]],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        &self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<f64>; 4] {
        &self.planes
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn pixel(&self, i: usize) -> Nrgb {
        Nrgb::new(
            self.planes[NIR][i],
            self.planes[RED][i],
            self.planes[GREEN][i],
            self.planes[BLUE][i],
        )
    }

    pub fn with_mask(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries, image has {}",
                valid.len(),
                self.len()
            )));
        }
        self.valid = valid;
        Ok(self)
    }

    /// A `[1, 4, H, W]` tensor holding the planes bit-for-bit.
    pub fn to_tensor(&self) -> Tensor4 {
        let mut data = Vec::with_capacity(4 * self.len());
        for plane in &self.planes {
            data.extend_from_slice(plane);
        }
        Tensor4::from_vec(Shape4::new(1, 4, self.height, self.width), data)
            .expect("plane sizes are checked at construction")
    }

    /// Inverse of [`NrgbImage::to_tensor`] for one batch element.
    pub fn from_tensor(t: &Tensor4, batch: usize, valid: Vec<bool>) -> Result<Self> {
        let s = t.shape();
        if s.c != 4 {
            return Err(Error::shape(format!("expected 4 channels, got {}", s.c)));
        }
        if batch >= s.n {
            return Err(Error::shape(format!(
                "batch index {batch} out of range {}",
                s.n
            )));
        }
        let planes = [0, 1, 2, 3].map(|c| t.plane(batch, c).to_vec());
        Self::new(s.w, s.h, planes, valid)
    }
}

/// Stacks images of identical size into one `[N, 4, H, W]` tensor.
pub fn stack_tensor(images: &[&NrgbImage]) -> Result<Tensor4> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to stack".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 4 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::Dimension(format!(
                "cannot stack {}x{} with {w}x{h}",
                img.width, img.height
            )));
        }
        for plane in &img.planes {
            data.extend_from_slice(plane);
        }
    }
    Tensor4::from_vec(Shape4::new(images.len(), 4, h, w), data)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn channel_count(img: &DynamicImage) -> usize {
    img.color().channel_count() as usize
}

fn gray_plane(path: &Path, img: &DynamicImage) -> Result<Vec<u8>> {
    let found = channel_count(img);
    if found != 1 {
        return Err(Error::ChannelCount {
            path: path.to_path_buf(),
            expected: 1,
            found,
        });
    }
    Ok(img.to_luma8().into_raw())
}

/// Loads an 8-bit RGB file plus an 8-bit NIR file (and optionally an 8-bit
/// mask, nonzero = valid) into an [`NrgbImage`] scaled by 1/255.
pub fn load_image(rgb_path: &Path, nir_path: &Path, mask_path: Option<&Path>) -> Result<NrgbImage> {
    let rgb = open(rgb_path)?;
    let found = channel_count(&rgb);
    if found != 3 {
        return Err(Error::ChannelCount {
            path: rgb_path.to_path_buf(),
            expected: 3,
            found,
        });
    }
    let (w, h) = rgb.dimensions();
    let nir = open(nir_path)?;
    if nir.dimensions() != (w, h) {
        let (nw, nh) = nir.dimensions();
        return Err(Error::Dimension(format!(
            "{} is {w}x{h} but {} is {nw}x{nh}",
            rgb_path.display(),
            nir_path.display()
        )));
    }
    let nir = gray_plane(nir_path, &nir)?;

    let valid = match mask_path {
        Some(p) => {
            let m = open(p)?;
            if m.dimensions() != (w, h) {
                let (mw, mh) = m.dimensions();
                return Err(Error::Dimension(format!(
                    "mask {} is {mw}x{mh}, expected {w}x{h}",
                    p.display()
                )));
            }
            gray_plane(p, &m)?.into_iter().map(|v| v != 0).collect()
        }
        None => vec![true; (w * h) as usize],
    };

    let rgb = rgb.to_rgb8();
    let n = (w * h) as usize;
    let mut planes: [Vec<f64>; 4] = Default::default();
    for p in planes.iter_mut() {
        p.reserve_exact(n);
    }
    planes[NIR].extend(nir.iter().map(|&v| f64::from(v) / 255.0));
    for px in rgb.pixels() {
        planes[RED].push(f64::from(px[0]) / 255.0);
        planes[GREEN].push(f64::from(px[1]) / 255.0);
        planes[BLUE].push(f64::from(px[2]) / 255.0);
    }
    NrgbImage::new(w as usize, h as usize, planes, valid)
}
