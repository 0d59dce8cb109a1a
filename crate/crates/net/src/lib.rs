//! Low-rank deep unfolding network for coded-aperture spectral imaging.
//!
//! The network alternates physics-exact gradient steps on the spectral
//! basis `E` and the subspace images `A` with learned proximal networks,
//! on feature-lifted variables whose first `k` channels are the physical
//! factors. Everything runs in `f64` on a small tape-based autodiff.

// `!(x >= 0.0)` style checks reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod autodiff;
pub mod convert;
pub mod error;
pub mod gfum;
pub mod gradcheck;
pub mod layers;
pub mod lrdun;
pub mod ops;
pub mod params;
pub mod proxy;
pub mod scab;
pub mod tensor;
pub mod train;
pub mod weights;

#[cfg(test)]
pub(crate) mod testutil;

pub use accounting::{count_params_flops, Complexity};
pub use autodiff::{Graph, Var};
pub use error::{NetError, Result};
pub use gfum::{data_fidelity_feature_a, data_fidelity_feature_e, gfum_split, FeatureState};
pub use lrdun::{multi_stage_loss, Lrdun, NetConfig, Reconstruction};
pub use params::ParamSet;
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainLog};
