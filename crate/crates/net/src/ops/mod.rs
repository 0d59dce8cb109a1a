//! Differentiable operations on [`Var`](crate::autodiff::Var)s.

mod conv;
mod linalg;
mod norm;
mod physics;
mod pointwise;
mod shape;

pub use conv::{conv2d, Conv2dOpts};
pub use linalg::{compose, qr};
pub(crate) use linalg::{from_matrix, to_matrix};
pub use norm::layer_norm;
pub use physics::{gd_step_a, gd_step_e, Physics};
pub use pointwise::{add, dot_const, gelu, mul, rmse, scale, softplus, sub};
pub(crate) use pointwise::{softplus_inverse, softplus_value};
pub use shape::{concat_last, crop2d, pad_reflect2d, reshape, slice_last, upsample2x};

use crate::error::{NetError, Result};
use crate::tensor::Tensor;

pub(crate) fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NetError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub(crate) fn finite(t: Tensor, what: &str) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(NetError::Diverged(what.to_string()))
    }
}
