//! Spectral compressive imaging with a low-rank reformulation of the CASSI
//! sensing model.
//!
//! * [`cassi`]: forward/adjoint operators and the dense oracle;
//! * [`lowrank`]: `X = A x_3 E` and the basis/subspace operators;
//! * [`solver`] and [`prox`]: the classical alternating proximal-gradient
//!   reconstruction;
//! * [`datakit`]: synthetic scenes, crops and metrics;
//! * [`tensor_file`]: the `LRSCI1` container used by every tool.

// `!(x >= 0.0)` style checks reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cassi;
pub mod datakit;
pub mod error;
pub mod linalg;
pub mod lowrank;
pub mod prox;
pub mod solver;
pub mod tensor_file;

pub use cassi::{HsiCube, Measurement, SensingSpec};
pub use error::{Error, Result};
pub use lowrank::{SpectralBasis, SubspaceImages};
