//! Proximal operators for the two half-problems of the alternating solver.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::lowrank::{self, SpectralBasis, SubspaceImages};

/// Inner iterations of the dual TV projection unless configured otherwise.
pub const DEFAULT_TV_ITERS: usize = 30;

/// Chambolle's dual step; `tau <= 1/8` guarantees convergence.
const TV_TAU: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProxKind {
    Identity,
    SoftThreshold,
    Tv2d,
    QrOrthonormalize,
}

impl ProxKind {
    pub fn name(self) -> &'static str {
        match self {
            ProxKind::Identity => "identity",
            ProxKind::SoftThreshold => "soft_threshold",
            ProxKind::Tv2d => "tv2d",
            ProxKind::QrOrthonormalize => "qr_orthonormalize",
        }
    }

    /// True for proxes that leave `A E^T` unchanged.
    pub fn preserves_product(self) -> bool {
        matches!(self, ProxKind::Identity | ProxKind::QrOrthonormalize)
    }
}

impl FromStr for ProxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(ProxKind::Identity),
            "soft_threshold" | "soft" => Ok(ProxKind::SoftThreshold),
            "tv2d" | "tv" => Ok(ProxKind::Tv2d),
            "qr_orthonormalize" | "qr" => Ok(ProxKind::QrOrthonormalize),
            other => invalid(format!("unknown proximal operator '{other}'")),
        }
    }
}

impl TryFrom<String> for ProxKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProxKind> for String {
    fn from(k: ProxKind) -> String {
        k.name().to_string()
    }
}

impl fmt::Display for ProxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which factor a prox is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Basis,
    Subspace,
}

/// `sign(v) max(|v| - tau, 0)`.
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

fn grad(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = u.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if i + 1 < h {
                gx[[i, j]] = u[[i + 1, j]] - u[[i, j]];
            }
            if j + 1 < w {
                gy[[i, j]] = u[[i, j + 1]] - u[[i, j]];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`grad`].
fn div(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (h, w) = px.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dx = if h == 1 {
            0.0
        } else if i == 0 {
            px[[i, j]]
        } else if i + 1 == h {
            -px[[i - 1, j]]
        } else {
            px[[i, j]] - px[[i - 1, j]]
        };
        let dy = if w == 1 {
            0.0
        } else if j == 0 {
            py[[i, j]]
        } else if j + 1 == w {
            -py[[i, j - 1]]
        } else {
            py[[i, j]] - py[[i, j - 1]]
        };
        dx + dy
    })
}

/// Isotropic discrete total variation with forward differences.
pub fn total_variation(u: ArrayView2<'_, f64>) -> f64 {
    let (gx, gy) = grad(&u.to_owned());
    gx.iter()
        .zip(gy.iter())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum()
}

/// `argmin_u 1/2 ||u - f||^2 + lambda TV(u)` by Chambolle's dual projection.
pub fn tv_denoise_2d(f: ArrayView2<'_, f64>, lambda: f64, iters: usize) -> Array2<f64> {
    if lambda <= 0.0 {
        return f.to_owned();
    }
    let f = f.to_owned();
    let (h, w) = f.dim();
    let mut px = Array2::<f64>::zeros((h, w));
    let mut py = Array2::<f64>::zeros((h, w));
    for _ in 0..iters {
        let d = div(&px, &py) - &f / lambda;
        let (gx, gy) = grad(&d);
        for ((p, q), (a, b)) in px
            .iter_mut()
            .zip(py.iter_mut())
            .zip(gx.iter().zip(gy.iter()))
        {
            let denom = 1.0 + TV_TAU * (a * a + b * b).sqrt();
            *p = (*p + TV_TAU * a) / denom;
            *q = (*q + TV_TAU * b) / denom;
        }
    }
    &f - &(div(&px, &py) * lambda)
}

/// Per-channel TV prox on the `HW x k` subspace matrix. Channels are
/// independent, so evaluating them in parallel does not change the result.
fn tv_subspace(a: &SubspaceImages, lambda: f64, iters: usize) -> Result<SubspaceImages> {
    let (h, w, k) = (a.height(), a.width(), a.rank());
    let m = a.matrix();
    let channels: Vec<Array2<f64>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let img = Array2::from_shape_fn((h, w), |(i, j)| m[(i * w + j, c)]);
            tv_denoise_2d(img.view(), lambda, iters)
        })
        .collect();
    let out = DMatrix::from_fn(h * w, k, |p, c| channels[c][[p / w, p % w]]);
    SubspaceImages::new(h, w, out)
}

/// Applies `prox_{strength, R}` to one factor in place.
///
/// `qr_orthonormalize` orthonormalizes the targeted factor and compensates
/// the partner by `R^T`, leaving `A E^T` unchanged.
pub fn prox_apply(
    kind: ProxKind,
    strength: f64,
    target: Factor,
    basis: &mut SpectralBasis,
    images: &mut SubspaceImages,
    tv_iters: usize,
) -> Result<()> {
    if !(strength >= 0.0) {
        return invalid(format!("prox strength must be >= 0, got {strength}"));
    }
    match (kind, target) {
        (ProxKind::Identity, _) => {}
        (ProxKind::SoftThreshold, Factor::Basis) => {
            *basis = SpectralBasis::new(basis.matrix().map(|v| soft_threshold(v, strength)))?;
        }
        (ProxKind::SoftThreshold, Factor::Subspace) => {
            let m = images.matrix().map(|v| soft_threshold(v, strength));
            *images = SubspaceImages::new(images.height(), images.width(), m)?;
        }
        (ProxKind::Tv2d, Factor::Subspace) => {
            *images = tv_subspace(images, strength, tv_iters)?;
        }
        (ProxKind::Tv2d, Factor::Basis) => {
            return invalid("tv2d applies to subspace images only");
        }
        (ProxKind::QrOrthonormalize, Factor::Basis) => {
            let (e, a) = lowrank::renormalize(basis, images)?;
            *basis = e;
            *images = a;
        }
        (ProxKind::QrOrthonormalize, Factor::Subspace) => {
            let (q, r) = linalg::qr_positive(images.matrix())?;
            let e = basis.matrix() * r.transpose();
            *images = SubspaceImages::new(images.height(), images.width(), q)?;
            *basis = SpectralBasis::new(e)?;
        }
    }
    Ok(())
}

/// Name-based entry point to [`prox_apply`].
pub fn prox_apply_named(
    name: &str,
    strength: f64,
    target: Factor,
    basis: &mut SpectralBasis,
    images: &mut SubspaceImages,
) -> Result<()> {
    let kind: ProxKind = name.parse()?;
    prox_apply(kind, strength, target, basis, images, DEFAULT_TV_ITERS)
}
