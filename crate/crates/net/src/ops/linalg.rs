use nalgebra::DMatrix;

use crate::autodiff::Var;
use crate::error::{NetError, Result};
use crate::tensor::Tensor;

pub(crate) fn to_matrix(t: &Tensor, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, t.data())
}

pub(crate) fn from_matrix(m: &DMatrix<f64>, shape: Vec<usize>) -> Tensor {
    Tensor::new(shape, m.transpose().as_slice().to_vec()).expect("consistent")
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(NetError::Shape(format!(
            "{what} expects a matrix, got {s:?}"
        ))),
    }
}

/// `Q` of the thin QR factorization with positive `diag(R)`.
///
/// The backward pass is `(Q_bar + Q copyltu(M)) R^{-T}` with
/// `M = -Q_bar^T Q`, where `copyltu` mirrors the lower triangle upward.
pub fn qr(a: Var<'_>) -> Result<Var<'_>> {
    let av = a.value();
    let (m, n) = dims2(&av, "qr")?;
    let (q, r) = lrsci_core::linalg::qr_positive(&to_matrix(&av, m, n))?;
    let out = from_matrix(&q, vec![m, n]);
    let ia = a.id;
    Ok(a.graph.push(
        out,
        Box::new(move |g| {
            let gq = to_matrix(g, m, n);
            let mm = -(gq.transpose() * &q);
            let sym = DMatrix::from_fn(n, n, |i, j| mm[(i.max(j), i.min(j))]);
            let y = &gq + &q * sym;
            let xt = r
                .solve_upper_triangular(&y.transpose())
                .expect("R has a positive diagonal");
            vec![(ia, from_matrix(&xt.transpose(), vec![m, n]))]
        }),
    ))
}

/// `X = A E^T` for subspace images `H x W x k` and a basis `B x k`,
/// giving an `H x W x B` cube.
pub fn compose<'g>(a: Var<'g>, e: Var<'g>) -> Result<Var<'g>> {
    let (av, ev) = (a.value(), e.value());
    let (h, w, k) = match av.shape() {
        [h, w, k] => (*h, *w, *k),
        s => return Err(NetError::Shape(format!("compose images {s:?}"))),
    };
    let (b, ke) = dims2(&ev, "compose")?;
    if ke != k {
        return Err(NetError::Shape(format!("compose rank {k} vs {ke}")));
    }
    let am = to_matrix(&av, h * w, k);
    let em = to_matrix(&ev, b, k);
    let out = from_matrix(&(&am * em.transpose()), vec![h, w, b]);
    let (ia, ie) = (a.id, e.id);
    Ok(a.graph.push(
        out,
        Box::new(move |g| {
            let gx = to_matrix(g, h * w, b);
            vec![
                (ia, from_matrix(&(&gx * &em), vec![h, w, k])),
                (ie, from_matrix(&(gx.transpose() * &am), vec![b, k])),
            ]
        }),
    ))
}
