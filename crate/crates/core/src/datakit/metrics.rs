//! Reconstruction quality metrics.

use ndarray::{Array2, ArrayView2};

use crate::cassi::HsiCube;
use crate::error::{invalid, Result};

/// Reported PSNR ceiling; [`psnr`] itself returns `+inf` for exact matches.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(x: &HsiCube, reference: &HsiCube) -> Result<()> {
    if x.dims() != reference.dims() {
        return invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            x.dims(),
            reference.dims()
        ));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Cube-wide PSNR in dB; `+inf` when the inputs are identical.
pub fn psnr(x: &HsiCube, reference: &HsiCube, peak: f64) -> Result<f64> {
    check_shapes(x, reference)?;
    let n = x.data().len() as f64;
    let mse = x
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, peak))
}

/// PSNR of each band separately.
pub fn psnr_per_band(x: &HsiCube, reference: &HsiCube, peak: f64) -> Result<Vec<f64>> {
    check_shapes(x, reference)?;
    Ok((0..x.bands())
        .map(|b| {
            let (xb, rb) = (x.band(b), reference.band(b));
            let mse = xb
                .iter()
                .zip(rb.iter())
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                / xb.len() as f64;
            psnr_from_mse(mse, peak)
        })
        .collect())
}

/// Clamps the `+inf` sentinel for reports.
pub fn capped(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

fn window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = g.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| {
        (0..n).map(|t| g[t] * img[[i, j + t]]).sum::<f64>()
    });
    Array2::from_shape_fn((oh, ow), |(i, j)| {
        (0..n).map(|t| g[t] * rows[[i + t, j]]).sum::<f64>()
    })
}

fn ssim_2d(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, peak: f64) -> f64 {
    let (h, w) = x.dim();
    // images smaller than the window use the largest odd window that fits
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = window(size);
    let x = x.to_owned();
    let y = y.to_owned();
    let mu_x = filter_valid(&x, &g);
    let mu_y = filter_valid(&y, &g);
    let xx = filter_valid(&(&x * &x), &g);
    let yy = filter_valid(&(&y * &y), &g);
    let xy = filter_valid(&(&x * &y), &g);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);

    let mut total = 0.0;
    for idx in 0..mu_x.len() {
        let (i, j) = (idx / mu_x.ncols(), idx % mu_x.ncols());
        let (mx, my) = (mu_x[[i, j]], mu_y[[i, j]]);
        let mxy = mx * my;
        let sx = xx[[i, j]] - mx * mx;
        let sy = yy[[i, j]] - my * my;
        let sxy = xy[[i, j]] - mxy;
        let num = (2.0 * mxy + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sx + sy + c2);
        total += num / den;
    }
    total / mu_x.len() as f64
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over bands.
pub fn ssim(x: &HsiCube, reference: &HsiCube) -> Result<f64> {
    ssim_with_peak(x, reference, 1.0)
}

pub fn ssim_with_peak(x: &HsiCube, reference: &HsiCube, peak: f64) -> Result<f64> {
    check_shapes(x, reference)?;
    let b = x.bands();
    let sum: f64 = (0..b)
        .map(|k| ssim_2d(x.band(k), reference.band(k), peak))
        .sum();
    Ok(sum / b as f64)
}
