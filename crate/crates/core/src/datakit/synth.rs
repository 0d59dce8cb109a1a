//! Synthetic scenes with a controlled spectral rank.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cassi::HsiCube;
use crate::error::{invalid, Result};
use crate::linalg;
use crate::lowrank::{SpectralBasis, SubspaceImages};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub rank: usize,
    /// Standard deviation, in pixels, of the Gaussian low-pass applied to
    /// the spatial fields. Zero leaves them white.
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_smoothness() -> f64 {
    2.0
}

impl SynthSpec {
    pub fn new(height: usize, width: usize, bands: usize, rank: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            rank,
            smoothness: default_smoothness(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return invalid("synthetic dims must be >= 1");
        }
        if self.rank == 0 || self.rank > self.bands {
            return invalid(format!(
                "rank must be in 1..={}, got {}",
                self.bands, self.rank
            ));
        }
        if !(self.smoothness >= 0.0) {
            return invalid("smoothness must be >= 0");
        }
        Ok(())
    }
}

/// A generated cube and the factors it was composed from.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cube: HsiCube,
    pub basis: SpectralBasis,
    pub subspace: SubspaceImages,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dim();
    let rows = Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * img[[i, reflect(j as isize + t as isize - r, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * rows[[reflect(i as isize + t as isize - r, h), j]])
            .sum::<f64>()
    })
}

/// Draws a nonnegative cube of exact spectral rank `spec.rank`, scaled so
/// its maximum is 1.
///
/// Spectra are folded-Gaussian (nonnegative) and the spatial maps are
/// low-passed Gaussian fields clipped at zero, so the composition is already
/// nonnegative; the final clip only removes signed zeros. The returned basis
/// is the orthonormal `Q` of the spectra and the subspace images absorb `R`.
pub fn synth_hsi(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let (h, w, b, k) = (spec.height, spec.width, spec.bands, spec.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let spectra = DMatrix::from_fn(b, k, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
    let mut maps = DMatrix::zeros(h * w, k);
    for c in 0..k {
        let field = Array2::from_shape_fn((h, w), |_| rng.sample::<f64, _>(StandardNormal));
        let field = gaussian_blur(&field, spec.smoothness);
        let mean = field.mean().unwrap_or(0.0);
        let std = field.std(0.0);
        let std = if std > 0.0 { std } else { 1.0 };
        for i in 0..h {
            for j in 0..w {
                let v = 0.5 + 0.5 * (field[[i, j]] - mean) / std;
                maps[(i * w + j, c)] = v.max(0.0);
            }
        }
    }

    let unfolded = &maps * spectra.transpose();
    let peak = unfolded.iter().copied().fold(0.0_f64, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let cube = Array3::from_shape_fn((h, w, b), |(i, j, band)| {
        (unfolded[(i * w + j, band)] * scale).max(0.0)
    });

    let (q, r) = linalg::qr_positive(&spectra)?;
    let subspace = (&maps * r.transpose()) * scale;
    Ok(SynthScene {
        cube: HsiCube::new(cube)?,
        basis: SpectralBasis::new(q)?,
        subspace: SubspaceImages::new(h, w, subspace)?,
    })
}

/// Binary coded aperture with `P(open) = density`.
pub fn random_mask(height: usize, width: usize, density: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((height, width), |_| {
        if rng.random::<f64>() < density {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{compose, decompose_truncated_svd};

    #[test]
    fn cube_is_low_rank_and_normalized() {
        let spec = SynthSpec::new(32, 32, 8, 3, 7);
        let scene = synth_hsi(&spec).unwrap();
        let x = &scene.cube;
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(x.data().iter().copied().fold(0.0, f64::max), 1.0);

        let sv = x.unfold().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sv[3] <= 1e-8 * sv[0], "tail {:e}", sv[3] / sv[0]);

        let (e, a) = decompose_truncated_svd(x, 3).unwrap();
        let rec = compose(&a, &e).unwrap();
        let err = (rec.data() - x.data()).mapv(|v| v * v).sum().sqrt() / x.norm();
        assert!(err <= 1e-8);

        let truth = compose(&scene.subspace, &scene.basis).unwrap();
        assert!((truth.data() - x.data()).iter().all(|d| d.abs() < 1e-12));
        assert!(scene.basis.orthonormality_error() < 1e-12);
    }

    #[test]
    fn determinism() {
        let spec = SynthSpec::new(8, 6, 5, 2, 3);
        assert_eq!(
            synth_hsi(&spec).unwrap().cube,
            synth_hsi(&spec).unwrap().cube
        );
        let other = SynthSpec {
            seed: 4,
            ..spec.clone()
        };
        assert_ne!(
            synth_hsi(&spec).unwrap().cube,
            synth_hsi(&other).unwrap().cube
        );
    }

    #[test]
    fn invalid_rank() {
        assert!(synth_hsi(&SynthSpec::new(4, 4, 3, 4, 0)).is_err());
        assert!(synth_hsi(&SynthSpec::new(4, 4, 3, 0, 0)).is_err());
    }

    #[test]
    fn mask_density() {
        let m = random_mask(64, 64, 0.5, 1);
        let mean = m.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.03);
        assert!(m.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Array2::from_elem((5, 7), 3.0);
        let out = gaussian_blur(&img, 1.5);
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }
}
