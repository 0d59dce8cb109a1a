//! Classical alternating proximal-gradient solver over `(E, A)`.
//!
//! Each iteration takes a gradient step on the basis model with `A` fixed,
//! applies the basis prox, then does the same for the subspace model with
//! the freshly updated `E`.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cassi::{self, HsiCube, Measurement, SensingSpec};
use crate::error::{invalid, Error, Result};
use crate::lowrank::{self, SpectralBasis, SubspaceImages};
use crate::prox::{self, Factor, ProxKind};

/// Safety factor applied to `1 / L` for automatic step sizes.
pub const STEP_SAFETY: f64 = 0.9;
pub const DEFAULT_POWER_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `0.9 / L`, with `L` re-estimated by power iteration before each step.
    Auto,
    Fixed(f64),
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Auto => f.write_str("auto"),
            StepSize::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(StepSize::Auto);
        }
        s.parse::<f64>().map(StepSize::Fixed).map_err(|_| {
            Error::InvalidArgument(format!("step size must be 'auto' or a number, got '{s}'"))
        })
    }
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub k: usize,
    pub max_iters: usize,
    pub rho_e: StepSize,
    pub rho_a: StepSize,
    pub prox_e: ProxKind,
    pub prox_a: ProxKind,
    pub lambda_e: f64,
    pub lambda_a: f64,
    pub tol: f64,
    pub seed: u64,
    pub tv_iters: usize,
    pub power_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iters: 500,
            rho_e: StepSize::Auto,
            rho_a: StepSize::Auto,
            prox_e: ProxKind::QrOrthonormalize,
            prox_a: ProxKind::Identity,
            lambda_e: 0.0,
            lambda_a: 0.0,
            tol: 1e-3,
            seed: 0,
            tv_iters: prox::DEFAULT_TV_ITERS,
            power_iters: DEFAULT_POWER_ITERS,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("rank k must be >= 1");
        }
        for (name, step) in [("rho_e", self.rho_e), ("rho_a", self.rho_a)] {
            if let StepSize::Fixed(v) = step {
                if !(v > 0.0) || !v.is_finite() {
                    return invalid(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.lambda_e >= 0.0) || !(self.lambda_a >= 0.0) {
            return invalid("lambda_e and lambda_a must be >= 0");
        }
        if !(self.tol > 0.0) {
            return invalid(format!("tol must be > 0, got {}", self.tol));
        }
        Ok(())
    }

    /// `key=value` lines describing the configuration, for trace headers.
    pub fn describe(&self) -> Vec<String> {
        vec![
            format!("k={}", self.k),
            format!("max_iters={}", self.max_iters),
            format!("rho_e={}", self.rho_e),
            format!("rho_a={}", self.rho_a),
            format!("prox_e={}", self.prox_e),
            format!("prox_a={}", self.prox_a),
            format!("lambda_e={}", self.lambda_e),
            format!("lambda_a={}", self.lambda_a),
            format!("tol={}", self.tol),
            format!("seed={}", self.seed),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// `1/2 ||Phi vec(A E^T) - y||^2`.
    pub objective: f64,
    pub rel_residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<IterRecord>,
}

impl SolveTrace {
    /// CSV with columns `iter,objective,rel_residual,seconds`; each header
    /// line is emitted first as a `# ` comment.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> std::io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "iter,objective,rel_residual,seconds")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{:.6}",
                r.iter, r.objective, r.rel_residual, r.seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassicalInit {
    pub basis: SpectralBasis,
    pub subspace: SubspaceImages,
    /// Set when the measurement is identically zero.
    pub degenerate: bool,
}

/// Back-projection plus truncated SVD.
///
/// Each band of `adjoint(y)` is rescaled so its mean equals `mean(Y) / B`
/// before the factorization.
pub fn init_classical(y: &Measurement, spec: &SensingSpec, k: usize) -> Result<ClassicalInit> {
    let (h, w, b) = (spec.height(), spec.width(), spec.bands());
    if k == 0 || k > b {
        return invalid(format!("rank must be in 1..={b}, got {k}"));
    }
    spec.check_measurement(y)?;
    if y.data.iter().all(|v| *v == 0.0) {
        log::warn!("all-zero measurement; returning zero subspace initialization");
        let mut e = DMatrix::zeros(b, k);
        for j in 0..k {
            e[(j, j)] = 1.0;
        }
        return Ok(ClassicalInit {
            basis: SpectralBasis::new(e)?,
            subspace: SubspaceImages::zeros(h, w, k)?,
            degenerate: true,
        });
    }
    let target = y.data.mean().expect("non-empty") / b as f64;
    let mut x0 = cassi::adjoint(y, spec)?.into_inner();
    for band in 0..b {
        let mut slice = x0.index_axis_mut(ndarray::Axis(2), band);
        let mean = slice.mean().expect("non-empty");
        if mean.abs() > f64::MIN_POSITIVE {
            slice.mapv_inplace(|v| v * (target / mean));
        }
    }
    let (basis, subspace) = lowrank::decompose_truncated_svd(&HsiCube::new(x0)?, k)?;
    Ok(ClassicalInit {
        basis,
        subspace,
        degenerate: false,
    })
}

/// Largest eigenvalue of a PSD operator by power iteration on a seeded
/// Gaussian start vector. Returns the Rayleigh quotient of the last iterate,
/// which is nondecreasing in `iters`.
pub fn power_iteration<F>(dim: usize, iters: usize, seed: u64, mut apply: F) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let n = v.norm();
    if n == 0.0 {
        return Ok(0.0);
    }
    v /= n;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = apply(&v)?;
        estimate = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
    }
    Ok(estimate)
}

/// One of the two factored sensing operators, with the other factor fixed.
#[derive(Debug, Clone, Copy)]
pub enum LowRankOperator<'a> {
    /// `Phi_A`, acting on the basis.
    Basis(&'a SubspaceImages),
    /// `Phi_E`, acting on the subspace images.
    Subspace(&'a SpectralBasis),
}

/// Power-iteration estimate of `L = ||Phi_X||_2^2`. Zero signals a
/// degenerate (identically zero) operator.
pub fn estimate_lipschitz(
    op: LowRankOperator<'_>,
    spec: &SensingSpec,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let (h, w, b) = (spec.height(), spec.width(), spec.bands());
    match op {
        LowRankOperator::Basis(a) => {
            let k = a.rank();
            power_iteration(b * k, iters, seed, |v| {
                let e = SpectralBasis::new(DMatrix::from_column_slice(b, k, v.as_slice()))?;
                let y = lowrank::forward_lowrank(a, &e, spec)?;
                let g = lowrank::grad_basis(&y, a, spec)?;
                Ok(DVector::from_column_slice(g.as_slice()))
            })
        }
        LowRankOperator::Subspace(e) => {
            let k = e.rank();
            power_iteration(h * w * k, iters, seed, |v| {
                let a =
                    SubspaceImages::new(h, w, DMatrix::from_column_slice(h * w, k, v.as_slice()))?;
                let y = lowrank::forward_lowrank(&a, e, spec)?;
                let g = lowrank::grad_subspace(&y, e, spec)?;
                Ok(DVector::from_column_slice(g.as_slice()))
            })
        }
    }
}

fn diverged(iteration: usize) -> Error {
    Error::Diverged {
        iteration,
        trace: None,
    }
}

fn descend(x: &DMatrix<f64>, g: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for (o, gi) in out.iter_mut().zip(g.iter()) {
        *o -= rho * gi;
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(diverged(0))
    }
}

/// `E - rho_e Phi_A^T (Phi_A e - y)`.
pub fn gd_step_e(
    e: &SpectralBasis,
    a: &SubspaceImages,
    y: &Measurement,
    spec: &SensingSpec,
    rho_e: f64,
) -> Result<SpectralBasis> {
    let r = lowrank::forward_lowrank(a, e, spec)?.sub(y)?;
    let g = lowrank::grad_basis(&r, a, spec)?;
    SpectralBasis::new(descend(e.matrix(), &g, rho_e)?)
}

/// `A - rho_a Phi_E^T (Phi_E a - y)`.
pub fn gd_step_a(
    a: &SubspaceImages,
    e: &SpectralBasis,
    y: &Measurement,
    spec: &SensingSpec,
    rho_a: f64,
) -> Result<SubspaceImages> {
    let r = lowrank::forward_lowrank(a, e, spec)?.sub(y)?;
    let g = lowrank::grad_subspace(&r, e, spec)?;
    SubspaceImages::new(a.height(), a.width(), descend(a.matrix(), &g, rho_a)?)
}

/// `(1/2 ||r||^2, ||r|| / ||y||)` for `r = Phi vec(A E^T) - y`.
pub fn data_fidelity(
    a: &SubspaceImages,
    e: &SpectralBasis,
    y: &Measurement,
    spec: &SensingSpec,
) -> Result<(f64, f64)> {
    let r = lowrank::forward_lowrank(a, e, spec)?.sub(y)?;
    let rn = r.norm();
    let yn = y.norm();
    let rel = if yn > 0.0 { rn / yn } else { rn };
    Ok((0.5 * rn * rn, rel))
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub basis: SpectralBasis,
    pub subspace: SubspaceImages,
    pub cube: HsiCube,
    pub trace: SolveTrace,
}

fn resolve_step(
    step: StepSize,
    op: LowRankOperator<'_>,
    spec: &SensingSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<f64> {
    match step {
        StepSize::Fixed(v) => Ok(v),
        StepSize::Auto => {
            let l = estimate_lipschitz(op, spec, cfg.power_iters, seed)?;
            Ok(if l > 0.0 { STEP_SAFETY / l } else { 0.0 })
        }
    }
}

/// One E-problem update followed by one A-problem update.
fn iterate(
    e: &SpectralBasis,
    a: &SubspaceImages,
    y: &Measurement,
    spec: &SensingSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<(SpectralBasis, SubspaceImages)> {
    let rho_e = resolve_step(cfg.rho_e, LowRankOperator::Basis(a), spec, cfg, seed)?;
    let mut e_next = gd_step_e(e, a, y, spec, rho_e)?;
    let mut a_next = a.clone();
    prox::prox_apply(
        cfg.prox_e,
        cfg.lambda_e * rho_e,
        Factor::Basis,
        &mut e_next,
        &mut a_next,
        cfg.tv_iters,
    )?;
    let rho_a = resolve_step(
        cfg.rho_a,
        LowRankOperator::Subspace(&e_next),
        spec,
        cfg,
        seed + 1,
    )?;
    a_next = gd_step_a(&a_next, &e_next, y, spec, rho_a)?;
    prox::prox_apply(
        cfg.prox_a,
        cfg.lambda_a * rho_a,
        Factor::Subspace,
        &mut e_next,
        &mut a_next,
        cfg.tv_iters,
    )?;
    Ok((e_next, a_next))
}

/// Runs the alternating scheme from the classical initialization.
pub fn solve_alternating(
    y: &Measurement,
    spec: &SensingSpec,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    let init = init_classical(y, spec, cfg.k)?;
    let (mut e, mut a) = (init.basis, init.subspace);
    let mut trace = SolveTrace::default();
    let start = Instant::now();

    let fail = |it: usize, trace: &SolveTrace, err: Error| -> Error {
        match err {
            Error::Diverged { .. } | Error::InvalidArgument(_) | Error::DegenerateInput(_) => {
                Error::Diverged {
                    iteration: it,
                    trace: Some(Box::new(trace.clone())),
                }
            }
            other => other,
        }
    };

    for it in 0..cfg.max_iters {
        let seed = cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(2 * it as u64);
        let (e_next, a_next) =
            iterate(&e, &a, y, spec, cfg, seed).map_err(|err| fail(it, &trace, err))?;
        e = e_next;
        a = a_next;

        let (objective, rel_residual) = data_fidelity(&a, &e, y, spec)?;
        if !objective.is_finite() {
            return Err(fail(it, &trace, diverged(it)));
        }
        trace.records.push(IterRecord {
            iter: it + 1,
            objective,
            rel_residual,
            seconds: start.elapsed().as_secs_f64(),
        });
        if rel_residual < cfg.tol {
            break;
        }
    }

    let cube = lowrank::compose(&a, &e)?;
    Ok(Solution {
        basis: e,
        subspace: a,
        cube,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    struct Instance {
        spec: SensingSpec,
        e: SpectralBasis,
        a: SubspaceImages,
        y: Measurement,
    }

    fn instance(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, b, k) = (6, 5, 4, 2);
        let spec =
            SensingSpec::new(Array2::from_shape_fn((h, w), |_| rng.random::<f64>()), b, 1).unwrap();
        let e = SpectralBasis::new(rand_mat(b, k, &mut rng)).unwrap();
        let a = SubspaceImages::new(h, w, rand_mat(h * w, k, &mut rng)).unwrap();
        let y = Measurement::new(Array2::from_shape_fn((h, spec.out_width()), |_| {
            rng.random::<f64>()
        }));
        Instance { spec, e, a, y }
    }

    #[test]
    fn zero_steps_and_consistent_data_are_fixed_points() {
        let inst = instance(1);
        let e = gd_step_e(&inst.e, &inst.a, &inst.y, &inst.spec, 0.0).unwrap();
        assert_eq!(e, inst.e);
        let a = gd_step_a(&inst.a, &inst.e, &inst.y, &inst.spec, 0.0).unwrap();
        assert_eq!(a, inst.a);

        let y = lowrank::forward_lowrank(&inst.a, &inst.e, &inst.spec).unwrap();
        let e = gd_step_e(&inst.e, &inst.a, &y, &inst.spec, 0.7).unwrap();
        assert_eq!(e, inst.e);
        let a = gd_step_a(&inst.a, &inst.e, &y, &inst.spec, 0.7).unwrap();
        assert_eq!(a, inst.a);
    }

    #[test]
    fn descent_with_auto_steps() {
        for seed in 0..20 {
            let inst = instance(100 + seed);
            let (f0, _) = data_fidelity(&inst.a, &inst.e, &inst.y, &inst.spec).unwrap();
            let l =
                estimate_lipschitz(LowRankOperator::Basis(&inst.a), &inst.spec, 50, seed).unwrap();
            let e = gd_step_e(&inst.e, &inst.a, &inst.y, &inst.spec, 0.9 / l).unwrap();
            let (f1, _) = data_fidelity(&inst.a, &e, &inst.y, &inst.spec).unwrap();
            assert!(f1 < f0, "E step: {f1} !< {f0}");
            let l =
                estimate_lipschitz(LowRankOperator::Subspace(&e), &inst.spec, 50, seed).unwrap();
            let a = gd_step_a(&inst.a, &e, &inst.y, &inst.spec, 0.9 / l).unwrap();
            let (f2, _) = data_fidelity(&a, &e, &inst.y, &inst.spec).unwrap();
            assert!(f2 < f1, "A step: {f2} !< {f1}");
        }
    }

    #[test]
    fn power_iteration_on_scaled_orthonormal_rows() {
        // Phi with orthonormal rows scaled by c: Phi^T Phi has top eigenvalue c^2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, _) = crate::linalg::qr_positive(&rand_mat(30, 12, &mut rng)).unwrap();
        let c = 2.5;
        let phi = q.transpose() * c; // 12 x 30, orthonormal rows scaled by c
        let l = power_iteration(30, 50, 7, |v| Ok(phi.transpose() * (&phi * v))).unwrap();
        assert!((l - c * c).abs() <= 0.01 * c * c, "{l}");
    }

    #[test]
    fn power_iteration_is_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..5 {
            let m = rand_mat(15, 10, &mut rng);
            let n = m.transpose() * &m;
            let top = n.clone().symmetric_eigen().eigenvalues.max();
            let mut prev = 0.0;
            for iters in 1..=50 {
                let l = power_iteration(10, iters, trial, |v| Ok(&n * v)).unwrap();
                assert!(l >= prev - 1e-12 * top, "not monotone at {iters}");
                assert!(l <= top * (1.0 + 1e-12));
                prev = l;
            }
        }
    }

    #[test]
    fn zero_operator_has_zero_lipschitz() {
        let inst = instance(5);
        let zero = SubspaceImages::zeros(6, 5, 2).unwrap();
        let l = estimate_lipschitz(LowRankOperator::Basis(&zero), &inst.spec, 50, 0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_measurement_init_is_degenerate() {
        let inst = instance(6);
        let init = init_classical(&Measurement::zeros(&inst.spec), &inst.spec, 2).unwrap();
        assert!(init.degenerate);
        assert!(init.subspace.matrix().iter().all(|v| *v == 0.0));
        assert!(init.basis.orthonormality_error() < 1e-15);
    }

    #[test]
    fn init_is_deterministic() {
        let inst = instance(7);
        let a = init_classical(&inst.y, &inst.spec, 2).unwrap();
        let b = init_classical(&inst.y, &inst.spec, 2).unwrap();
        assert_eq!(a.basis, b.basis);
        assert_eq!(a.subspace, b.subspace);
        assert!(init_classical(&inst.y, &inst.spec, 5).is_err());
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let inst = instance(8);
        let cfg = SolverConfig {
            k: 2,
            max_iters: 0,
            ..SolverConfig::default()
        };
        let sol = solve_alternating(&inst.y, &inst.spec, &cfg).unwrap();
        let init = init_classical(&inst.y, &inst.spec, 2).unwrap();
        assert!(sol.trace.records.is_empty());
        assert_eq!(sol.basis, init.basis);
        assert_eq!(sol.subspace, init.subspace);
    }

    #[test]
    fn fixed_point_of_consistent_factors() {
        let inst = instance(9);
        let (e, a) = lowrank::renormalize(&inst.e, &inst.a).unwrap();
        let y = lowrank::forward_lowrank(&a, &e, &inst.spec).unwrap();
        let x = lowrank::compose(&a, &e).unwrap();
        let rho_e =
            0.9 / estimate_lipschitz(LowRankOperator::Basis(&a), &inst.spec, 50, 0).unwrap();
        let mut e1 = gd_step_e(&e, &a, &y, &inst.spec, rho_e).unwrap();
        let mut a1 = a.clone();
        prox::prox_apply(
            ProxKind::QrOrthonormalize,
            0.0,
            Factor::Basis,
            &mut e1,
            &mut a1,
            30,
        )
        .unwrap();
        let rho_a =
            0.9 / estimate_lipschitz(LowRankOperator::Subspace(&e1), &inst.spec, 50, 1).unwrap();
        let a1 = gd_step_a(&a1, &e1, &y, &inst.spec, rho_a).unwrap();
        let x1 = lowrank::compose(&a1, &e1).unwrap();
        let diff = (x1.data() - x.data()).mapv(|v| v * v).sum().sqrt();
        assert!(diff <= 1e-10 * x.norm());
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let inst = instance(10);
        let cfg = SolverConfig {
            k: 2,
            max_iters: 200,
            rho_e: StepSize::Fixed(1e3),
            rho_a: StepSize::Fixed(1e3),
            prox_e: ProxKind::Identity,
            prox_a: ProxKind::Identity,
            ..SolverConfig::default()
        };
        match solve_alternating(&inst.y, &inst.spec, &cfg) {
            Err(Error::Diverged {
                trace: Some(t),
                iteration,
            }) => {
                assert_eq!(t.records.len(), iteration);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(SolverConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            rho_e: StepSize::Fixed(-1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
        let cfg: SolverConfig =
            serde_json::from_str(r#"{"k":2,"rho_e":0.5,"rho_a":"auto","prox_a":"tv2d"}"#).unwrap();
        assert_eq!(cfg.rho_e, StepSize::Fixed(0.5));
        assert_eq!(cfg.rho_a, StepSize::Auto);
        assert_eq!(cfg.prox_a, ProxKind::Tv2d);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"bogus":1}"#).is_err());
        let _ = Array3::<f64>::zeros((1, 1, 1));
    }
}
