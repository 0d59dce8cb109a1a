//! Small dense helpers shared by the low-rank model and the solver.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `||M^T M - I||_F`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    (m.transpose() * m - DMatrix::<f64>::identity(k, k)).norm()
}

/// Reduced QR with the diagonal of `R` forced positive, so the factorization
/// is unique for full-column-rank input.
pub fn qr_positive(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m.ncols() > m.nrows() {
        return Err(Error::InvalidArgument(format!(
            "QR needs a tall matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("QR input is not finite".into()));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let scale = r.diagonal().amax().max(m.amax());
    for j in 0..r.ncols() {
        let d = r[(j, j)];
        if !(d.abs() > 1e-12 * scale) {
            return Err(Error::DegenerateInput(format!(
                "matrix is rank deficient (|R[{j},{j}]| = {:e})",
                d.abs()
            )));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    Ok((q, r))
}

/// Top-`k` left singular vectors of `m`, ordered by decreasing singular
/// value, each signed so that its largest-magnitude entry is positive.
pub fn leading_left_singular_vectors(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    // stable sort keeps the factorization's own order on ties
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let rows = m.nrows();
    let mut out = DMatrix::zeros(rows, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut col = u.column(src).clone_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        out.set_column(dst, &col);
    }
    if k > order.len() {
        // wide input with fewer columns than requested: complete the basis
        complete_orthonormal(&mut out, order.len());
    }
    out
}

/// Fills columns `filled..` of `q` with unit vectors orthogonal to the
/// preceding columns, using Gram-Schmidt against the canonical basis.
pub fn complete_orthonormal(q: &mut DMatrix<f64>, filled: usize) {
    let n = q.nrows();
    let mut j = filled;
    for cand in 0..n {
        if j >= q.ncols() {
            break;
        }
        let mut v = nalgebra::DVector::<f64>::zeros(n);
        v[cand] = 1.0;
        for _ in 0..2 {
            for c in 0..j {
                let proj = q.column(c).dot(&v);
                v.axpy(-proj, &q.column(c), 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            q.set_column(j, &(v / norm));
            j += 1;
        }
    }
}
