use lrsci_core::cassi::{adjoint, build_explicit_sensing_matrix, forward};
use lrsci_core::datakit::{psnr, random_mask, synth_hsi, SynthSpec};
use lrsci_core::lowrank::{compose, decompose_truncated_svd};
use lrsci_core::solver::{solve_alternating, SolverConfig};
use lrsci_core::tensor_file::{DType, TensorFile};
use lrsci_core::{HsiCube, Measurement, SensingSpec};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn cube_from(h: usize, w: usize, b: usize, vals: &[f64]) -> HsiCube {
    HsiCube::new(Array3::from_shape_fn((h, w, b), |(i, j, k)| {
        vals[(i * w + j) * b + k]
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn adjoint_identity_for_any_geometry(
        h in 1usize..7, w in 1usize..7, b in 1usize..6, step in 0usize..3,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mask = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
        let spec = SensingSpec::new(mask, b, step).unwrap();
        let vals: Vec<f64> = (0..h * w * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = cube_from(h, w, b, &vals);
        let y = Measurement::new(Array2::from_shape_fn((h, spec.out_width()), |_| rng.random_range(-1.0..1.0)));
        let lhs = forward(&x, &spec).unwrap().dot(&y);
        let rhs = x.dot(&adjoint(&y, &spec).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + x.norm() * y.norm()));

        // and the matrix-free forward agrees with the dense matrix
        let phi = build_explicit_sensing_matrix(&spec).unwrap();
        let dense = &phi * nalgebra::DVector::from_vec(x.to_canonical());
        let fwd = forward(&x, &spec).unwrap();
        for (a, d) in fwd.as_slice().iter().zip(dense.iter()) {
            prop_assert!((a - d).abs() <= 1e-12);
        }
    }
}

#[test]
fn simulated_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_hsi(&SynthSpec::new(12, 10, 5, 2, 4)).unwrap();
    let spec = SensingSpec::new(random_mask(12, 10, 0.5, 1), 5, 2).unwrap();
    let y = forward(&scene.cube, &spec).unwrap();

    let files = [
        (TensorFile::from_cube(&scene.cube, DType::F64), "x"),
        (TensorFile::from_mask(spec.mask(), DType::F64), "m"),
        (TensorFile::from_measurement(&y, 2, DType::F64), "y"),
        (TensorFile::from_basis(&scene.basis, DType::F64), "e"),
        (TensorFile::from_subspace(&scene.subspace, DType::F64), "a"),
    ];
    for (file, name) in &files {
        let path = dir.path().join(format!("{name}.lrsci"));
        file.save(&path).unwrap();
        assert_eq!(&TensorFile::load(&path).unwrap(), file);
    }
    let back_y = TensorFile::load(dir.path().join("y.lrsci"))
        .unwrap()
        .to_measurement()
        .unwrap();
    assert_eq!(back_y, y);
    let back_e = TensorFile::load(dir.path().join("e.lrsci"))
        .unwrap()
        .to_basis()
        .unwrap();
    let back_a = TensorFile::load(dir.path().join("a.lrsci"))
        .unwrap()
        .to_subspace()
        .unwrap();
    let rebuilt = compose(&back_a, &back_e).unwrap();
    assert!(psnr(&rebuilt, &scene.cube, 1.0).unwrap() > 200.0);
}

#[test]
fn solver_fits_the_measurement_and_descends() {
    let scene = synth_hsi(&SynthSpec::new(16, 16, 6, 2, 9)).unwrap();
    let spec = SensingSpec::new(random_mask(16, 16, 0.5, 2), 6, 1).unwrap();
    let y = forward(&scene.cube, &spec).unwrap();
    let cfg = SolverConfig {
        k: 2,
        max_iters: 150,
        ..SolverConfig::default()
    };
    let sol = solve_alternating(&y, &spec, &cfg).unwrap();
    let r = &sol.trace.records;
    assert!(r.windows(2).all(|w| w[1].objective <= w[0].objective));
    assert!(r.last().unwrap().rel_residual < 0.5 * r[0].rel_residual);
    assert!(sol.basis.orthonormality_error() < 1e-10);
    let direct = compose(&sol.subspace, &sol.basis).unwrap();
    assert_eq!(direct, sol.cube);
}

#[test]
fn truncated_svd_of_a_synthetic_cube_is_exact() {
    let scene = synth_hsi(&SynthSpec::new(20, 14, 9, 4, 3)).unwrap();
    let (e, a) = decompose_truncated_svd(&scene.cube, 4).unwrap();
    assert!(psnr(&compose(&a, &e).unwrap(), &scene.cube, 1.0).unwrap() > 150.0);
}
