//! Independent checks of the matrix-free operators against explicit
//! matrices, of the gradient steps against finite differences, and of the
//! network's backward pass.

use lrsci_core::cassi::{adjoint, build_explicit_sensing_matrix, forward};
use lrsci_core::lowrank::{
    build_explicit_phi_a, build_explicit_phi_e, forward_lowrank, grad_basis, grad_subspace,
};
use lrsci_core::solver::{data_fidelity, gd_step_a, gd_step_e};
use lrsci_core::{HsiCube, Measurement, SensingSpec, SpectralBasis, SubspaceImages};
use lrsci_net::gradcheck::{check_gradients, check_module, perturb, GradCheckReport};
use lrsci_net::params::Registry;
use lrsci_net::proxy::{ProxyA, ProxyE};
use lrsci_net::scab::Scab;
use lrsci_net::{Lrdun, NetConfig, Tensor};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A measured discrepancy and the bound it must stay within.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
        }
    }

    /// NaN never passes.
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {}: {:.3e} (tolerance {:.0e})",
            self.name, self.value, self.tolerance
        )
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn random_spec(h: usize, w: usize, b: usize, step: usize, rng: &mut ChaCha8Rng) -> SensingSpec {
    let mask = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
    SensingSpec::new(mask, b, step).expect("valid random spec")
}

fn random_cube(h: usize, w: usize, b: usize, rng: &mut ChaCha8Rng) -> HsiCube {
    HsiCube::new(Array3::from_shape_fn((h, w, b), |_| uniform(rng))).expect("finite")
}

fn random_meas(spec: &SensingSpec, rng: &mut ChaCha8Rng) -> Measurement {
    Measurement::new(Array2::from_shape_fn(
        (spec.height(), spec.out_width()),
        |_| uniform(rng),
    ))
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(r, c, |_, _| uniform(rng))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Matrix-free forward and adjoint against the dense sensing matrix.
pub fn explicit_operator(trials: usize, seed: u64) -> anyhow::Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let spec = random_spec(4, 3, 3, 1, &mut rng);
        let phi = build_explicit_sensing_matrix(&spec)?;
        let x = random_cube(4, 3, 3, &mut rng);
        let y = random_meas(&spec, &mut rng);

        let dense_y = &phi * nalgebra::DVector::from_vec(x.to_canonical());
        worst = worst.max(max_abs_diff(
            forward(&x, &spec)?.as_slice(),
            dense_y.as_slice(),
        ));

        let dense_x = phi.transpose() * nalgebra::DVector::from_column_slice(y.as_slice());
        worst = worst.max(max_abs_diff(
            &adjoint(&y, &spec)?.to_canonical(),
            dense_x.as_slice(),
        ));
    }
    Ok(Check::new("explicit sensing matrix", worst, 1e-12))
}

/// `max |<Phi x, y> - <x, Phi^T y>| / (||x|| ||y||)` over random pairs.
pub fn adjoint_dot_test(
    trials: usize,
    dims: (usize, usize, usize),
    step: usize,
    seed: u64,
) -> anyhow::Result<Check> {
    let (h, w, b) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(h, w, b, step, &mut rng);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let x = random_cube(h, w, b, &mut rng);
        let y = random_meas(&spec, &mut rng);
        let lhs = forward(&x, &spec)?.dot(&y);
        let rhs = x.dot(&adjoint(&y, &spec)?);
        worst = worst.max((lhs - rhs).abs() / (x.norm() * y.norm()));
    }
    Ok(Check::new(
        format!("adjoint dot test {h}x{w}x{b} step {step}"),
        worst,
        1e-10,
    ))
}

/// `vec(M^T)` of a matrix, i.e. its row-major entries.
fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// The low-rank forward map and both gradients against the dense
/// `Phi (I_B kron A)` and `Phi (E kron I_HW)`.
pub fn kronecker(trials: usize, seed: u64) -> anyhow::Result<Check> {
    let (h, w, b, k) = (4, 3, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let spec = random_spec(h, w, b, 1, &mut rng);
        let e = SpectralBasis::new(random_matrix(b, k, &mut rng))?;
        let a = SubspaceImages::new(h, w, random_matrix(h * w, k, &mut rng))?;
        let r = random_meas(&spec, &mut rng);
        let r_vec = nalgebra::DVector::from_column_slice(r.as_slice());

        let phi_a = build_explicit_phi_a(&a, &spec)?;
        let phi_e = build_explicit_phi_e(&e, &spec)?;
        let y = forward_lowrank(&a, &e, &spec)?;
        // e = vec(E^T) is E row-major; a = vec(A) is A column-major
        let via_a = &phi_a * nalgebra::DVector::from_vec(row_major(e.matrix()));
        let via_e = &phi_e * nalgebra::DVector::from_column_slice(a.matrix().as_slice());
        worst = worst.max(max_abs_diff(y.as_slice(), via_a.as_slice()));
        worst = worst.max(max_abs_diff(y.as_slice(), via_e.as_slice()));

        let ge = grad_basis(&r, &a, &spec)?;
        let ga = grad_subspace(&r, &e, &spec)?;
        worst = worst.max(max_abs_diff(
            &row_major(&ge),
            (phi_a.transpose() * &r_vec).as_slice(),
        ));
        worst = worst.max(max_abs_diff(
            ga.as_slice(),
            (phi_e.transpose() * &r_vec).as_slice(),
        ));
    }
    Ok(Check::new("kronecker operators", worst, 1e-10))
}

/// Central differences of `1/2 ||Phi vec(A E^T) - y||^2` against the
/// gradient implied by a unit gradient step, `X - step(X, 1)`.
pub fn gd_step_gradients(seed: u64, h_fd: f64) -> anyhow::Result<Vec<Check>> {
    let (h, w, b, k) = (6, 5, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(h, w, b, 1, &mut rng);
    let e = SpectralBasis::new(random_matrix(b, k, &mut rng))?;
    let a = SubspaceImages::new(h, w, random_matrix(h * w, k, &mut rng))?;
    let y = random_meas(&spec, &mut rng);
    let objective = |a: &SubspaceImages, e: &SpectralBasis| -> anyhow::Result<f64> {
        Ok(data_fidelity(a, e, &y, &spec)?.0)
    };
    let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(1e-6);

    let grad_e = e.matrix() - gd_step_e(&e, &a, &y, &spec, 1.0)?.matrix();
    let mut worst_e = 0.0_f64;
    for idx in 0..grad_e.len() {
        let shifted = |d: f64| -> anyhow::Result<f64> {
            let mut m = e.matrix().clone();
            m[idx] += d;
            objective(&a, &SpectralBasis::new(m)?)
        };
        let numeric = (shifted(h_fd)? - shifted(-h_fd)?) / (2.0 * h_fd);
        worst_e = worst_e.max(rel(grad_e[idx], numeric));
    }

    let grad_a = a.matrix() - gd_step_a(&a, &e, &y, &spec, 1.0)?.matrix();
    let mut worst_a = 0.0_f64;
    for idx in 0..grad_a.len() {
        let shifted = |d: f64| -> anyhow::Result<f64> {
            let mut m = a.matrix().clone();
            m[idx] += d;
            objective(&SubspaceImages::new(h, w, m)?, &e)
        };
        let numeric = (shifted(h_fd)? - shifted(-h_fd)?) / (2.0 * h_fd);
        worst_a = worst_a.max(rel(grad_a[idx], numeric));
    }
    Ok(vec![
        Check::new("basis step gradient", worst_e, 1e-4),
        Check::new("subspace step gradient", worst_a, 1e-4),
    ])
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(rng)).collect()).expect("shape")
}

fn report_check(name: &str, report: &GradCheckReport, tol: f64) -> Check {
    if let Some(p) = report.worst() {
        log::debug!(
            "{name}: worst probe {} [{}] {} vs {}",
            p.name,
            p.index,
            p.analytic,
            p.numeric
        );
    }
    Check::new(name, report.max_rel_error(), tol)
}

/// Parameter-gradient checks of the learned components and of a full
/// two-stage network under the multi-stage loss, at `count` random
/// parameters each. Zero-initialized layers are perturbed first so they do
/// not hide the gradients of the layers before them.
pub fn network_gradients(count: usize, seed: u64) -> anyhow::Result<Vec<Check>> {
    const TOL: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut reg = Registry::default();
    let pe = ProxyE::new(&mut reg, "pe", 3, 5);
    let p = perturb(&reg.initialize(seed), 0.3, seed + 1);
    let x = random_tensor(&[8, 5], &mut rng);
    let r = check_module(&p, &x, count, 1e-5, seed + 2, |v, x| pe.apply(v, x))?;
    checks.push(report_check("proxy_e gradients", &r, TOL));

    let mut reg = Registry::default();
    let scab = Scab::new(&mut reg, "scab", 4, 5);
    let p = perturb(&reg.initialize(seed), 0.3, seed + 3);
    let x = random_tensor(&[7, 6, 4], &mut rng);
    let r = check_module(&p, &x, count, 1e-5, seed + 4, |v, x| scab.apply(v, x))?;
    checks.push(report_check("scab gradients", &r, TOL));

    let mut reg = Registry::default();
    let pa = ProxyA::new(&mut reg, "pa", 3, 2, 5);
    let p = perturb(&reg.initialize(seed), 0.3, seed + 5);
    let x = random_tensor(&[8, 6, 3], &mut rng);
    let r = check_module(&p, &x, count, 1e-5, seed + 6, |v, x| pa.apply(v, x))?;
    checks.push(report_check("proxy_a gradients", &r, TOL));

    let (h, w, b) = (8, 8, 6);
    let x = lrsci_core::datakit::synth_hsi(&lrsci_core::datakit::SynthSpec::new(h, w, b, 3, seed))?
        .cube;
    let spec = SensingSpec::new(lrsci_core::datakit::random_mask(h, w, 0.5, seed + 7), b, 2)?;
    let net = Lrdun::new(NetConfig {
        scab_kernel: 5,
        seed,
        ..NetConfig::new(2, 3, 5)
    })?;
    let params = perturb(
        &net.initial_params(&forward(&x, &spec)?, &spec)?,
        0.05,
        seed + 8,
    );
    let r = check_gradients(&params, count, 1e-6, seed + 9, |p| {
        lrsci_net::train::sample_loss_and_grad(&net, p, &x, &spec)
    })?;
    checks.push(report_check("two-stage network loss gradients", &r, TOL));
    Ok(checks)
}

/// Every oracle at its standard size, in a fixed order.
pub fn all_checks(seed: u64, network: bool) -> anyhow::Result<Vec<Check>> {
    let mut checks = vec![
        explicit_operator(20, seed)?,
        adjoint_dot_test(100, (16, 16, 8), 2, seed)?,
        kronecker(20, seed)?,
    ];
    checks.extend(gd_step_gradients(seed, 1e-6)?);
    if network {
        checks.extend(network_gradients(20, seed)?);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_verdicts() {
        assert!(Check::new("a", 1e-12, 1e-10).passed());
        assert!(!Check::new("a", 1e-9, 1e-10).passed());
        assert!(!Check::new("a", f64::NAN, 1e-10).passed());
        assert!(Check::new("a", 0.5, 1.0).to_string().starts_with("PASS a"));
    }

    #[test]
    fn a_wrong_transpose_is_caught() {
        // the dot test must notice an operator that is not the adjoint
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = random_spec(5, 4, 3, 1, &mut rng);
        let x = random_cube(5, 4, 3, &mut rng);
        let y = random_meas(&spec, &mut rng);
        let mut wrong = adjoint(&y, &spec).unwrap().into_inner();
        wrong[[0, 0, 0]] += 0.1;
        let wrong = HsiCube::new(wrong).unwrap();
        let gap = (forward(&x, &spec).unwrap().dot(&y) - x.dot(&wrong)).abs();
        assert!(gap / (x.norm() * y.norm()) > 1e-10);
    }
}
