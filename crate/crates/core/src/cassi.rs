//! CASSI physics: coded-aperture modulation, per-band dispersion shift and
//! detector integration, together with the exact adjoint.
//!
//! Conventions used throughout the crate:
//!
//! * band `b` is shifted right by `d_b = step * b` columns on the detector, so
//!   the measurement is `H x (W + d_{B-1})`;
//! * the canonical cube vectorization stacks bands, each band spatially
//!   row-major: `j = b*H*W + h*W + w`;
//! * measurements vectorize row-major: `i = h*W' + w'`.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Largest `H*W*B` for which the dense sensing matrix may be built.
pub const EXPLICIT_MAX_UNKNOWNS: usize = 10_000;

/// Hyperspectral cube stored as an `H x W x B` array.
///
/// Values are radiances in arbitrary units. Back-projected quantities such as
/// adjoint residuals may be negative, so only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    data: Array3<f64>,
}

impl HsiCube {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, b) = data.dim();
        if h == 0 || w == 0 || b == 0 {
            return invalid(format!("cube dims must be >= 1, got {h}x{w}x{b}"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return invalid("cube contains non-finite values");
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::new(Array3::zeros((height, width, bands)))
    }

    /// Builds a cube from its `HW x B` unfolding (row `p = h*W + w`, column `b`).
    pub fn from_unfolded(height: usize, width: usize, unfolded: &DMatrix<f64>) -> Result<Self> {
        if unfolded.nrows() != height * width {
            return invalid(format!(
                "unfolding has {} rows, expected {}",
                unfolded.nrows(),
                height * width
            ));
        }
        let bands = unfolded.ncols();
        let data = Array3::from_shape_fn((height, width, bands), |(h, w, b)| {
            unfolded[(h * width + w, b)]
        });
        Self::new(data)
    }

    /// Builds a cube from a vector in canonical (band-major) order.
    pub fn from_canonical(height: usize, width: usize, bands: usize, v: &[f64]) -> Result<Self> {
        if v.len() != height * width * bands {
            return invalid(format!(
                "vector length {} does not match {height}x{width}x{bands}",
                v.len()
            ));
        }
        let hw = height * width;
        let data = Array3::from_shape_fn((height, width, bands), |(h, w, b)| {
            v[b * hw + h * width + w]
        });
        Self::new(data)
    }

    pub fn to_canonical(&self) -> Vec<f64> {
        let (h, w, b) = self.dims();
        let mut out = vec![0.0; h * w * b];
        for ((i, j, k), v) in self.data.indexed_iter() {
            out[k * h * w + i * w + j] = *v;
        }
        out
    }

    /// The `HW x B` unfolding, i.e. `X_(3)^T`.
    pub fn unfold(&self) -> DMatrix<f64> {
        let (h, w, b) = self.dims();
        DMatrix::from_fn(h * w, b, |p, k| self.data[[p / w, p % w, k]])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Contiguous `(h, w, b)` storage, band fastest.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("cube storage is standard layout")
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), b)
    }

    pub fn dot(&self, other: &HsiCube) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Coded aperture plus linear dispersion schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSpec {
    mask: Array2<f64>,
    step: usize,
    offsets: Vec<usize>,
}

impl SensingSpec {
    pub fn new(mask: Array2<f64>, bands: usize, step: usize) -> Result<Self> {
        let (h, w) = mask.dim();
        if h == 0 || w == 0 {
            return invalid("mask must be non-empty");
        }
        if !mask
            .iter()
            .all(|m| m.is_finite() && (0.0..=1.0).contains(m))
        {
            return invalid("mask values must lie in [0, 1]");
        }
        let offsets = make_shift_schedule(bands, step)?;
        Ok(Self {
            mask: mask.as_standard_layout().into_owned(),
            step,
            offsets,
        })
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.mask
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn height(&self) -> usize {
        self.mask.dim().0
    }

    pub fn width(&self) -> usize {
        self.mask.dim().1
    }

    pub fn bands(&self) -> usize {
        self.offsets.len()
    }

    /// Detector width `W' = W + d_{B-1}`.
    pub fn out_width(&self) -> usize {
        self.width() + self.offsets.last().copied().unwrap_or(0)
    }

    pub fn check_cube(&self, x: &HsiCube) -> Result<()> {
        let (h, w, b) = x.dims();
        if (h, w) != self.mask.dim() || b != self.bands() {
            return invalid(format!(
                "cube {h}x{w}x{b} does not match sensing spec {}x{}x{}",
                self.height(),
                self.width(),
                self.bands()
            ));
        }
        Ok(())
    }

    pub fn check_measurement(&self, y: &Measurement) -> Result<()> {
        if y.data.dim() != (self.height(), self.out_width()) {
            return invalid(format!(
                "measurement {:?} does not match expected {}x{}",
                y.data.dim(),
                self.height(),
                self.out_width()
            ));
        }
        Ok(())
    }
}

/// 2D detector snapshot, `H x W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: Array2<f64>,
    pub noise_sigma: f64,
}

impl Measurement {
    pub fn new(data: Array2<f64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
            noise_sigma: 0.0,
        }
    }

    pub fn zeros(spec: &SensingSpec) -> Self {
        Self::new(Array2::zeros((spec.height(), spec.out_width())))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("measurement storage is standard layout")
    }

    pub fn dot(&self, other: &Measurement) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Measurement) -> Result<Measurement> {
        if self.data.dim() != other.data.dim() {
            return invalid("measurement shapes differ");
        }
        Ok(Measurement::new(&self.data - &other.data))
    }
}

/// Per-band dispersion offsets `[0, step, 2*step, ...]`.
pub fn make_shift_schedule(bands: usize, step: usize) -> Result<Vec<usize>> {
    if bands == 0 {
        return invalid("band count must be positive");
    }
    Ok((0..bands).map(|b| b * step).collect())
}

/// Mask, shift and integrate: `Y(h, w + d_b) += M(h, w) X_b(h, w)`.
pub fn forward(x: &HsiCube, spec: &SensingSpec) -> Result<Measurement> {
    spec.check_cube(x)?;
    let (h, w, b) = x.dims();
    let wp = spec.out_width();
    let mask = spec.mask.as_slice().expect("standard layout");
    let xs = x.as_slice();
    let mut y = vec![0.0; h * wp];
    for i in 0..h {
        let row = &mut y[i * wp..(i + 1) * wp];
        for j in 0..w {
            let m = mask[i * w + j];
            let px = &xs[(i * w + j) * b..(i * w + j + 1) * b];
            for (band, &d) in spec.offsets.iter().enumerate() {
                row[j + d] += m * px[band];
            }
        }
    }
    Ok(Measurement::new(
        Array2::from_shape_vec((h, wp), y).expect("shape matches"),
    ))
}

/// Exact transpose of [`forward`]: `Z_b(h, w) = M(h, w) Y(h, w + d_b)`.
pub fn adjoint(y: &Measurement, spec: &SensingSpec) -> Result<HsiCube> {
    spec.check_measurement(y)?;
    let (h, w, b) = (spec.height(), spec.width(), spec.bands());
    let wp = spec.out_width();
    let mask = spec.mask.as_slice().expect("standard layout");
    let ys = y.as_slice();
    let mut z = vec![0.0; h * w * b];
    for i in 0..h {
        let row = &ys[i * wp..(i + 1) * wp];
        for j in 0..w {
            let m = mask[i * w + j];
            let px = &mut z[(i * w + j) * b..(i * w + j + 1) * b];
            for (band, &d) in spec.offsets.iter().enumerate() {
                px[band] = m * row[j + d];
            }
        }
    }
    let data = Array3::from_shape_vec((h, w, b), z).expect("shape matches");
    HsiCube::new(data)
        .map_err(|_| Error::InvalidArgument("measurement has non-finite values".into()))
}

/// Dense `HW' x HWB` sensing matrix. Test oracle for tiny instances only.
pub fn build_explicit_sensing_matrix(spec: &SensingSpec) -> Result<DMatrix<f64>> {
    let (h, w, b) = (spec.height(), spec.width(), spec.bands());
    let n = h * w * b;
    if n > EXPLICIT_MAX_UNKNOWNS {
        return Err(Error::ResourceLimit(format!(
            "explicit sensing matrix needs HWB <= {EXPLICIT_MAX_UNKNOWNS}, got {n}"
        )));
    }
    let wp = spec.out_width();
    let mut phi = DMatrix::zeros(h * wp, n);
    for (band, &d) in spec.offsets.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                phi[(i * wp + j + d, band * h * w + i * w + j)] = spec.mask[[i, j]];
            }
        }
    }
    Ok(phi)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma`.
pub fn add_noise(y: &Measurement, sigma: f64, seed: u64) -> Result<Measurement> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("noise sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let data = y.data.mapv(|v| v + normal.sample(&mut rng));
    Ok(Measurement {
        data,
        noise_sigma: (y.noise_sigma.powi(2) + sigma * sigma).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_cube(h: usize, w: usize, b: usize, rng: &mut impl Rng) -> HsiCube {
        HsiCube::new(Array3::from_shape_fn((h, w, b), |_| rng.random::<f64>())).unwrap()
    }

    fn random_spec(h: usize, w: usize, b: usize, step: usize, rng: &mut impl Rng) -> SensingSpec {
        SensingSpec::new(
            Array2::from_shape_fn((h, w), |_| rng.random::<f64>()),
            b,
            step,
        )
        .unwrap()
    }

    #[test]
    fn shift_schedule() {
        let d = make_shift_schedule(28, 2).unwrap();
        assert_eq!(d.len(), 28);
        assert_eq!(d[27], 54);
        assert!(d.iter().enumerate().all(|(i, &v)| v == 2 * i));
        assert_eq!(make_shift_schedule(1, 5).unwrap(), vec![0]);
        assert_eq!(make_shift_schedule(3, 1).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            make_shift_schedule(0, 1),
            Err(Error::InvalidArgument(_))
        ));

        let spec = SensingSpec::new(Array2::ones((256, 256)), 28, 2).unwrap();
        assert_eq!(spec.out_width(), 310);
    }

    #[test]
    fn forward_uniform_row() {
        let spec = SensingSpec::new(Array2::ones((1, 2)), 2, 1).unwrap();
        let x = HsiCube::new(Array3::ones((1, 2, 2))).unwrap();
        let y = forward(&x, &spec).unwrap();
        assert_eq!(y.data, array![[1.0, 2.0, 1.0]]);

        let z = adjoint(&y, &spec).unwrap();
        assert_eq!(z.band(0), array![[1.0, 2.0]]);
        assert_eq!(z.band(1), array![[2.0, 1.0]]);
    }

    #[test]
    fn zero_mask_and_zero_measurement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = SensingSpec::new(Array2::zeros((4, 5)), 3, 2).unwrap();
        let x = random_cube(4, 5, 3, &mut rng);
        assert!(forward(&x, &spec).unwrap().data.iter().all(|&v| v == 0.0));

        let spec = random_spec(4, 5, 3, 2, &mut rng);
        let z = adjoint(&Measurement::zeros(&spec), &spec).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = SensingSpec::new(Array2::ones((3, 3)), 2, 1).unwrap();
        let x = HsiCube::zeros(3, 4, 2).unwrap();
        assert!(matches!(forward(&x, &spec), Err(Error::InvalidArgument(_))));
        let y = Measurement::new(Array2::zeros((3, 3)));
        assert!(matches!(adjoint(&y, &spec), Err(Error::InvalidArgument(_))));
        assert!(SensingSpec::new(array![[1.5]], 1, 0).is_err());
    }

    #[test]
    fn explicit_matrix_scalar_and_sparsity() {
        let spec = SensingSpec::new(array![[0.3]], 1, 0).unwrap();
        let phi = build_explicit_sensing_matrix(&spec).unwrap();
        assert_eq!(phi.shape(), (1, 1));
        assert_eq!(phi[(0, 0)], 0.3);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = random_spec(4, 3, 3, 1, &mut rng);
        let phi = build_explicit_sensing_matrix(&spec).unwrap();
        for r in 0..phi.nrows() {
            let nnz = phi.row(r).iter().filter(|v| **v != 0.0).count();
            assert!(nnz <= 3);
        }
    }

    #[test]
    fn explicit_matrix_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(4, 3, 3, 1, &mut rng);
        let phi = build_explicit_sensing_matrix(&spec).unwrap();
        for _ in 0..10 {
            let x = random_cube(4, 3, 3, &mut rng);
            let y = forward(&x, &spec).unwrap();
            let oracle = &phi * nalgebra::DVector::from_vec(x.to_canonical());
            for (a, b) in y.as_slice().iter().zip(oracle.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn explicit_matrix_size_cap() {
        let spec = SensingSpec::new(Array2::ones((40, 40)), 8, 1).unwrap();
        assert!(matches!(
            build_explicit_sensing_matrix(&spec),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn noise_contract() {
        let spec = SensingSpec::new(Array2::ones((2, 2)), 2, 1).unwrap();
        let y = forward(&HsiCube::new(Array3::ones((2, 2, 2))).unwrap(), &spec).unwrap();
        assert_eq!(add_noise(&y, 0.0, 1).unwrap(), y);
        assert_eq!(
            add_noise(&y, 0.3, 9).unwrap(),
            add_noise(&y, 0.3, 9).unwrap()
        );
        assert!(add_noise(&y, -1.0, 0).is_err());

        let big = Measurement::new(Array2::zeros((1000, 1000)));
        let noisy = add_noise(&big, 0.1, 42).unwrap();
        let n = noisy.data.len() as f64;
        let mean = noisy.data.sum() / n;
        let var = noisy.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.099..=0.101).contains(&std), "empirical std {std}");
        assert_eq!(noisy.noise_sigma, 0.1);
    }

    #[test]
    fn canonical_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cube(3, 4, 2, &mut rng);
        let v = x.to_canonical();
        assert_eq!(v[12 + 2 * 4 + 3], x.data()[[2, 3, 1]]);
        assert_eq!(HsiCube::from_canonical(3, 4, 2, &v).unwrap(), x);
        assert_eq!(HsiCube::from_unfolded(3, 4, &x.unfold()).unwrap(), x);
    }
}
