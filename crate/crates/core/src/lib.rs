//! Vegetation-index data fusion for NRGB imagery.
//!
//! The crate is organized bottom-up:
//!
//! - [`raster`]: four-channel (NIR, R, G, B) images with validity masks.
//! - [`indices`]: the thirteen NRGB vegetation indices behind a name-keyed
//!   registry, dataset statistics and pixel-level correlation.
//! - [`diffcore`]: rank-4 tensors with paired gradient buffers, convolution,
//!   clipped division, dense layers, activations, Adam and a finite-difference
//!   checker.
//! - [`gvi`]: the learnable ratio-of-convolutions layer.
//! - [`norm`]: batch, group, instance, layer and additive group normalization.
//! - [`gradsuite`]: finite-difference checks of every backward pass.
//! - [`loss`] and [`metrics`]: focal/dice training losses and overlapped-label IoU.
//! - [`experiments`]: synthetic data, the index-fitting study and the toy
//!   segmentation study.
//! - [`cli`]: the `vifuse` command-line front end.

pub mod cli;
pub mod diffcore;
pub mod error;
pub mod experiments;
pub mod gradsuite;
pub mod gvi;
pub mod indices;
pub mod loss;
pub mod metrics;
pub mod norm;
pub mod raster;

pub use error::{Error, Result};
