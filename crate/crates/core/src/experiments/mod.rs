//! Desk-scale studies built on the library: synthetic scenes, index fitting
//! with batch versus additive group normalization, and a toy segmentation
//! comparison of fusion strategies.

pub mod fit;
pub mod schedule;
pub mod segment;
pub mod synth;

pub use fit::{
    fit_vi_experiment, pixel_dataset, relative_error_pct, FitConfig, FitOutcome, PixelDataset,
};
pub use schedule::{cosine_lr, early_stop, TrainSchedule};
pub use segment::{
    toy_segmentation_experiment, Fusion, FusionVariant, SegConfig, SegNet, SegOutcome,
    VariantRegistry,
};
pub use synth::{synth_dataset, SynthDataset, SynthSpec, CLASS_NAMES};
