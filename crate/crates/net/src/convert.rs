//! Conversions between core containers and [`Tensor`]s.

use lrsci_core::cassi::HsiCube;
use lrsci_core::lowrank::{SpectralBasis, SubspaceImages};
use ndarray::{Array2, Array3};

use crate::error::{NetError, Result};
use crate::ops::{from_matrix, to_matrix};
use crate::tensor::Tensor;

/// `B x k` basis as a row-major tensor.
pub fn basis_tensor(e: &SpectralBasis) -> Tensor {
    from_matrix(e.matrix(), vec![e.bands(), e.rank()])
}

/// `HW x k` subspace matrix as an `H x W x k` tensor.
pub fn images_tensor(a: &SubspaceImages) -> Tensor {
    from_matrix(a.matrix(), vec![a.height(), a.width(), a.rank()])
}

pub fn cube_tensor(x: &HsiCube) -> Tensor {
    let (h, w, b) = x.dims();
    Tensor::new(vec![h, w, b], x.as_slice().to_vec()).expect("consistent")
}

/// `H x W x 1` tensor of a mask.
pub fn mask_tensor(mask: &Array2<f64>) -> Tensor {
    let (h, w) = mask.dim();
    Tensor::new(vec![h, w, 1], mask.iter().copied().collect()).expect("consistent")
}

pub fn tensor_basis(t: &Tensor) -> Result<SpectralBasis> {
    match t.shape() {
        [b, k] => Ok(SpectralBasis::new(to_matrix(t, *b, *k))?),
        s => Err(NetError::Shape(format!("basis tensor {s:?}"))),
    }
}

pub fn tensor_images(t: &Tensor) -> Result<SubspaceImages> {
    match t.shape() {
        [h, w, k] => Ok(SubspaceImages::new(*h, *w, to_matrix(t, h * w, *k))?),
        s => Err(NetError::Shape(format!("subspace tensor {s:?}"))),
    }
}

pub fn tensor_cube(t: &Tensor) -> Result<HsiCube> {
    match t.shape() {
        [h, w, b] => Ok(HsiCube::new(
            Array3::from_shape_vec((*h, *w, *b), t.data().to_vec()).expect("consistent"),
        )?),
        s => Err(NetError::Shape(format!("cube tensor {s:?}"))),
    }
}
