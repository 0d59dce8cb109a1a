//! Low-rank factorization `X = A x_3 E` and the two sensing operators it
//! induces.
//!
//! With `e = vec(E^T)` and `a = vec(A)` (column-major `vec`), the CASSI model
//! `y = Phi vec(A E^T)` splits into
//!
//! * the basis model `y = Phi_A e`, `Phi_A = Phi (I_B kron A)`;
//! * the subspace model `y = Phi_E a`, `Phi_E = Phi (E kron I_HW)`.
//!
//! Neither operator is ever materialized on the main path: both reduce to a
//! composition with [`crate::cassi::forward`] / [`crate::cassi::adjoint`] and
//! a small matrix product. The `build_explicit_*` functions exist only as
//! test oracles.

use nalgebra::DMatrix;
use ndarray::Array3;

use crate::cassi::{self, HsiCube, Measurement, SensingSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Largest number of entries an explicit Kronecker operator may have.
pub const EXPLICIT_MAX_ENTRIES: usize = 1_000_000;

/// `B x k` spectral basis; columns are basis spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis(DMatrix<f64>);

impl SpectralBasis {
    pub fn new(e: DMatrix<f64>) -> Result<Self> {
        if e.ncols() == 0 || e.nrows() == 0 || e.ncols() > e.nrows() {
            return invalid(format!(
                "basis must be B x k with 1 <= k <= B, got {}x{}",
                e.nrows(),
                e.ncols()
            ));
        }
        if !e.iter().all(|v| v.is_finite()) {
            return invalid("basis contains non-finite values");
        }
        Ok(Self(e))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    /// `||E^T E - I_k||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        linalg::orthonormality_error(&self.0)
    }
}

/// Subspace images as the `HW x k` matrix `A = A_(3)^T`, row `p = h*W + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceImages {
    matrix: DMatrix<f64>,
    height: usize,
    width: usize,
}

impl SubspaceImages {
    pub fn new(height: usize, width: usize, matrix: DMatrix<f64>) -> Result<Self> {
        if height == 0 || width == 0 || matrix.nrows() != height * width || matrix.ncols() == 0 {
            return invalid(format!(
                "subspace matrix {}x{} does not match {height}x{width}xk",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return invalid("subspace images contain non-finite values");
        }
        Ok(Self {
            matrix,
            height,
            width,
        })
    }

    pub fn zeros(height: usize, width: usize, rank: usize) -> Result<Self> {
        Self::new(height, width, DMatrix::zeros(height * width, rank))
    }

    /// From an `H x W x k` array.
    pub fn from_array(images: &Array3<f64>) -> Result<Self> {
        let (h, w, k) = images.dim();
        Self::new(
            h,
            w,
            DMatrix::from_fn(h * w, k, |p, j| images[[p / w, p % w, j]]),
        )
    }

    /// The `H x W x k` view of the images.
    pub fn to_array(&self) -> Array3<f64> {
        let w = self.width;
        Array3::from_shape_fn((self.height, self.width, self.rank()), |(i, j, c)| {
            self.matrix[(i * w + j, c)]
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Number of unknowns in the factored model, `k (B + HW)`.
pub fn unknown_count(height: usize, width: usize, bands: usize, rank: usize) -> usize {
    rank * (bands + height * width)
}

fn check_pair(a: &SubspaceImages, e: &SpectralBasis) -> Result<()> {
    if a.rank() != e.rank() {
        return invalid(format!(
            "rank mismatch: subspace has {} columns, basis has {}",
            a.rank(),
            e.rank()
        ));
    }
    Ok(())
}

fn check_subspace(a: &SubspaceImages, spec: &SensingSpec) -> Result<()> {
    if (a.height, a.width) != (spec.height(), spec.width()) {
        return invalid(format!(
            "subspace {}x{} does not match mask {}x{}",
            a.height,
            a.width,
            spec.height(),
            spec.width()
        ));
    }
    Ok(())
}

fn check_basis(e: &SpectralBasis, spec: &SensingSpec) -> Result<()> {
    if e.bands() != spec.bands() {
        return invalid(format!(
            "basis has {} bands, sensing spec has {}",
            e.bands(),
            spec.bands()
        ));
    }
    Ok(())
}

/// `X_(3) = E A_(3)`, i.e. band `b` is `reshape(A E(b, :)^T)`.
pub fn compose(a: &SubspaceImages, e: &SpectralBasis) -> Result<HsiCube> {
    check_pair(a, e)?;
    let unfolded = &a.matrix * e.0.transpose();
    HsiCube::from_unfolded(a.height, a.width, &unfolded)
}

/// Rank-`k` truncated SVD of the `B x HW` unfolding.
///
/// `E` holds the top-`k` left singular vectors, each sign-fixed so its
/// largest-magnitude entry is positive, and `A = X_(3)^T E`.
pub fn decompose_truncated_svd(
    x: &HsiCube,
    rank: usize,
) -> Result<(SpectralBasis, SubspaceImages)> {
    let (h, w, b) = x.dims();
    if rank == 0 || rank > b {
        return invalid(format!("rank must be in 1..={b}, got {rank}"));
    }
    let unfolded = x.unfold();
    let basis = linalg::leading_left_singular_vectors(&unfolded.transpose(), rank);
    let a = &unfolded * &basis;
    Ok((SpectralBasis::new(basis)?, SubspaceImages::new(h, w, a)?))
}

/// `Phi vec(A E^T)`; serves as both `Phi_A e` and `Phi_E a`.
pub fn forward_lowrank(
    a: &SubspaceImages,
    e: &SpectralBasis,
    spec: &SensingSpec,
) -> Result<Measurement> {
    check_subspace(a, spec)?;
    check_basis(e, spec)?;
    cassi::forward(&compose(a, e)?, spec)
}

/// `Phi_A^T r` as the `B x k` matrix `Z^T A`, where `Z` is the `HW x B`
/// unfolding of `adjoint(r)`.
pub fn grad_basis(
    residual: &Measurement,
    a: &SubspaceImages,
    spec: &SensingSpec,
) -> Result<DMatrix<f64>> {
    check_subspace(a, spec)?;
    let z = cassi::adjoint(residual, spec)?.unfold();
    Ok(z.transpose() * &a.matrix)
}

/// `Phi_E^T r` as the `HW x k` matrix `Z E`.
pub fn grad_subspace(
    residual: &Measurement,
    e: &SpectralBasis,
    spec: &SensingSpec,
) -> Result<DMatrix<f64>> {
    check_basis(e, spec)?;
    let z = cassi::adjoint(residual, spec)?.unfold();
    Ok(z * &e.0)
}

fn explicit_cap(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > EXPLICIT_MAX_ENTRIES {
        return Err(Error::ResourceLimit(format!(
            "explicit operator {rows}x{cols} exceeds {EXPLICIT_MAX_ENTRIES} entries"
        )));
    }
    Ok(())
}

/// Dense `Phi (I_B kron A)`, acting on `e = vec(E^T)`. Oracle only.
pub fn build_explicit_phi_a(a: &SubspaceImages, spec: &SensingSpec) -> Result<DMatrix<f64>> {
    check_subspace(a, spec)?;
    let b = spec.bands();
    explicit_cap(spec.height() * spec.out_width(), b * a.rank())?;
    let phi = cassi::build_explicit_sensing_matrix(spec)?;
    let factor = DMatrix::<f64>::identity(b, b).kronecker(&a.matrix);
    Ok(phi * factor)
}

/// Dense `Phi (E kron I_HW)`, acting on `a = vec(A)`. Oracle only.
pub fn build_explicit_phi_e(e: &SpectralBasis, spec: &SensingSpec) -> Result<DMatrix<f64>> {
    check_basis(e, spec)?;
    let hw = spec.height() * spec.width();
    explicit_cap(spec.height() * spec.out_width(), hw * e.rank())?;
    let phi = cassi::build_explicit_sensing_matrix(spec)?;
    let factor = e.0.kronecker(&DMatrix::<f64>::identity(hw, hw));
    Ok(phi * factor)
}

/// Product-preserving orthonormalization: `E = Q R` with `diag(R) > 0`,
/// returning `(Q, A R^T)` so that `A E^T` is unchanged.
pub fn renormalize(
    e: &SpectralBasis,
    a: &SubspaceImages,
) -> Result<(SpectralBasis, SubspaceImages)> {
    check_pair(a, e)?;
    let (q, r) = linalg::qr_positive(&e.0)?;
    let a_new = &a.matrix * r.transpose();
    Ok((
        SpectralBasis(q),
        SubspaceImages {
            matrix: a_new,
            height: a.height,
            width: a.width,
        },
    ))
}
