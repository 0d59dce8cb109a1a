//! Synthetic data, crops and quality metrics.

pub mod crop;
pub mod metrics;
pub mod synth;

pub use crop::{crop, crop_corners, crop_sampler};
pub use metrics::{capped, psnr, psnr_per_band, ssim, ssim_with_peak, PSNR_CAP_DB};
pub use synth::{random_mask, synth_hsi, SynthScene, SynthSpec};
