//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stdout (bypassing the harness capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use lrsci_core::cassi::forward;
use lrsci_core::datakit::{psnr, random_mask, ssim, synth_hsi, SynthSpec};
use lrsci_core::linalg::orthonormality_error;
use lrsci_core::solver::{gd_step_a, gd_step_e, solve_alternating, SolverConfig};
use lrsci_core::tensor_file::{DType, TensorFile};
use lrsci_core::{HsiCube, Measurement, SensingSpec, SpectralBasis, SubspaceImages};
use lrsci_net::convert::{basis_tensor, images_tensor, tensor_basis, tensor_images};
use lrsci_net::gradcheck::perturb;
use lrsci_net::{
    count_params_flops, data_fidelity_feature_a, data_fidelity_feature_e, gfum_split, train, Lrdun,
    NetConfig, Tensor, TrainConfig,
};
use lrsci_tool::oracle;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} - {detail}").unwrap();
    out.flush().unwrap();
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_01_adjoint_dot_test() {
    let t = Instant::now();
    let check = oracle::adjoint_dot_test(100, (16, 16, 8), 2, 2024).unwrap();
    let elapsed = t.elapsed();
    let pass = check.passed() && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        &format!(
            "max |<Phi x,y> - <x,Phi^T y>|/(|x||y|) = {:.2e} over 100 pairs (<= 1e-10), {:.2} s (< 5 s)",
            check.value,
            secs(elapsed)
        ),
    );
    assert!(pass, "{check}");
}

#[test]
fn criterion_02_kronecker_oracle() {
    let t = Instant::now();
    let check = oracle::kronecker(20, 7).unwrap();
    let elapsed = t.elapsed();
    let pass = check.passed() && elapsed < Duration::from_secs(5);
    report(
        2,
        pass,
        &format!(
            "max abs deviation from explicit Kronecker operators {:.2e} over 20 trials (<= 1e-10), {:.2} s (< 5 s)",
            check.value,
            secs(elapsed)
        ),
    );
    assert!(pass, "{check}");
}

#[test]
fn criterion_03_gradient_steps_match_finite_differences() {
    let checks: Vec<_> = (0..5)
        .flat_map(|seed| oracle::gd_step_gradients(seed, 1e-6).unwrap())
        .collect();
    let worst = checks.iter().map(|c| c.value).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.passed());
    report(
        3,
        pass,
        &format!(
            "worst relative error of basis/subspace step gradients {worst:.2e} (<= 1e-4, h = 1e-6)"
        ),
    );
    assert!(pass, "{checks:?}");
}

#[test]
fn criterion_04_classical_solver_recovery() {
    let scene = synth_hsi(&SynthSpec::new(32, 32, 8, 3, 11)).unwrap();
    let spec = SensingSpec::new(random_mask(32, 32, 0.5, 12), 8, 2).unwrap();
    let y = forward(&scene.cube, &spec).unwrap();
    let cfg = SolverConfig::default();
    assert_eq!(cfg.max_iters, 500);

    let t = Instant::now();
    let sol = solve_alternating(&y, &spec, &cfg).unwrap();
    let elapsed = t.elapsed();

    let last = sol.trace.records.last().expect("at least one iteration");
    let db = psnr(&sol.cube, &scene.cube, 1.0).unwrap();
    let monotone = sol
        .trace
        .records
        .windows(2)
        .all(|w| w[1].objective <= w[0].objective);
    let residual_ok = last.rel_residual <= 1e-3;
    let psnr_ok = db >= 40.0;
    let time_ok = elapsed < Duration::from_secs(60);
    let pass = residual_ok && psnr_ok && monotone && time_ok;
    report(
        4,
        pass,
        &format!(
            "relative residual {:.3e} after {} iterations (<= 1e-3: {residual_ok}), PSNR {db:.2} dB (>= 40: {psnr_ok}), \
             objective monotone: {monotone}, {:.1} s (< 60 s)",
            last.rel_residual,
            last.iter,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn criterion_05_gfum_invariants() {
    let (h, w, b, k) = (8, 6, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut aux_ok = true;
    let mut phys_ok = true;
    for trial in 0..50 {
        let c = k + 1 + trial % 4;
        let mask = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
        let spec = SensingSpec::new(mask, b, 1 + trial % 2).unwrap();
        let y = Measurement::new(Array2::from_shape_fn((h, spec.out_width()), |_| {
            rng.random::<f64>()
        }));
        let e_feat = random_tensor(&[b, c], &mut rng);
        let a_feat = random_tensor(&[h, w, c], &mut rng);
        let (rho_e, rho_a) = (rng.random_range(0.0..0.1), rng.random_range(0.0..0.1));

        let (e_phys, e_aux) = gfum_split(&e_feat, k).unwrap();
        let (a_phys, a_aux) = gfum_split(&a_feat, k).unwrap();
        let e_next = data_fidelity_feature_e(&e_feat, &y, &spec, &a_phys, rho_e).unwrap();
        let (e_next_phys, e_next_aux) = gfum_split(&e_next, k).unwrap();
        let a_next = data_fidelity_feature_a(&a_feat, &y, &spec, &e_next_phys, rho_a).unwrap();
        let (a_next_phys, a_next_aux) = gfum_split(&a_next, k).unwrap();
        aux_ok &= bits(e_next_aux.data()) == bits(e_aux.data());
        aux_ok &= bits(a_next_aux.data()) == bits(a_aux.data());

        // the physical channels follow the classical steps exactly
        let e = tensor_basis(&e_phys).unwrap();
        let a = tensor_images(&a_phys).unwrap();
        let e_classic = gd_step_e(&e, &a, &y, &spec, rho_e).unwrap();
        let a_classic = gd_step_a(&a, &e_classic, &y, &spec, rho_a).unwrap();
        phys_ok &= basis_tensor(&e_classic) == e_next_phys;
        phys_ok &= images_tensor(&a_classic) == a_next_phys;
    }

    // C = k: no auxiliary channels, the feature steps are the classical steps
    let scene = synth_hsi(&SynthSpec::new(8, 8, 6, 3, 1)).unwrap();
    let spec = SensingSpec::new(random_mask(8, 8, 0.5, 2), 6, 2).unwrap();
    let y = forward(&scene.cube, &spec).unwrap();
    let e =
        SpectralBasis::new(nalgebra::DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>())).unwrap();
    let a = SubspaceImages::new(
        8,
        8,
        nalgebra::DMatrix::from_fn(64, 3, |_, _| rng.random::<f64>()),
    )
    .unwrap();
    let e_feat =
        data_fidelity_feature_e(&basis_tensor(&e), &y, &spec, &images_tensor(&a), 0.01).unwrap();
    let e_step = gd_step_e(&e, &a, &y, &spec, 0.01).unwrap();
    let a_feat = data_fidelity_feature_a(&images_tensor(&a), &y, &spec, &e_feat, 0.2).unwrap();
    let a_step = gd_step_a(&a, &e_step, &y, &spec, 0.2).unwrap();
    let equal_k = e_feat == basis_tensor(&e_step) && a_feat == images_tensor(&a_step);
    let net = Lrdun::new(NetConfig {
        scab_kernel: 5,
        ..NetConfig::new(2, 3, 3)
    })
    .unwrap();
    let params = net.initial_params(&y, &spec).unwrap();
    let runs = net
        .reconstruct(&params, &y, &spec)
        .map(|r| r.cube().dims() == (8, 8, 6))
        .unwrap_or(false);

    let pass = aux_ok && phys_ok && equal_k && runs;
    report(
        5,
        pass,
        &format!(
            "aux channels bit-identical on 50 states: {aux_ok}; physical channels equal classical steps: {phys_ok}; \
             C = k steps identical: {equal_k}; C = k network runs: {runs}"
        ),
    );
    assert!(pass);
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn criterion_06_orthonormal_bases_after_every_proxy() {
    let scene = synth_hsi(&SynthSpec::new(16, 16, 8, 3, 21)).unwrap();
    let spec = SensingSpec::new(random_mask(16, 16, 0.5, 22), 8, 2).unwrap();
    let y = forward(&scene.cube, &spec).unwrap();
    let net = Lrdun::new(NetConfig {
        scab_kernel: 5,
        ..NetConfig::new(3, 3, 6)
    })
    .unwrap();
    let init = net.initial_params(&y, &spec).unwrap();
    let mut worst = 0.0_f64;
    for (i, params) in [init.clone(), perturb(&init, 0.1, 1), perturb(&init, 0.5, 2)]
        .iter()
        .enumerate()
    {
        let rec = net.reconstruct(params, &y, &spec).unwrap();
        assert_eq!(rec.stages.len(), 3, "parameter set {i}");
        for stage in &rec.stages {
            let e = tensor_basis(&stage.e).unwrap();
            worst = worst.max(orthonormality_error(e.matrix()));
        }
    }
    let pass = worst <= 1e-5;
    report(
        6,
        pass,
        &format!("max ||E^T E - I||_F over 3 stages x 3 parameter sets = {worst:.2e} (<= 1e-5)"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_network_gradients() {
    let t = Instant::now();
    let checks = oracle::network_gradients(20, 31).unwrap();
    let elapsed = t.elapsed();
    let pass = checks.iter().all(|c| c.passed()) && elapsed < Duration::from_secs(120);
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {:.2e}", c.name, c.value))
        .collect();
    report(
        7,
        pass,
        &format!(
            "max relative errors at 20 parameters each (<= 1e-3): {}; {:.1} s (< 120 s)",
            detail.join(", "),
            secs(elapsed)
        ),
    );
    assert!(pass, "{checks:?}");
}

#[test]
fn criterion_08_toy_training() {
    let cube = |seed| synth_hsi(&SynthSpec::new(32, 32, 8, 3, seed)).unwrap().cube;
    let data: Vec<HsiCube> = (0..16).map(cube).collect();
    let held_out: Vec<HsiCube> = (100..104).map(cube).collect();
    let spec = SensingSpec::new(random_mask(32, 32, 0.5, 7), 8, 2).unwrap();
    let net = Lrdun::new(NetConfig::new(2, 3, 6)).unwrap();
    assert_eq!(net.config().unet_depth, 2);
    let cfg = TrainConfig {
        lr: 4e-4,
        steps: Some(300),
        batch_size: 16,
        seed: 0,
        ..TrainConfig::default()
    };
    let mean_psnr = |p: &lrsci_net::ParamSet| -> f64 {
        held_out
            .iter()
            .map(|x| {
                let y = forward(x, &spec).unwrap();
                psnr(net.reconstruct(p, &y, &spec).unwrap().cube(), x, 1.0).unwrap()
            })
            .sum::<f64>()
            / held_out.len() as f64
    };

    let t = Instant::now();
    let init = lrsci_net::train::prepare(&net, &data, &spec, &cfg).unwrap();
    let before = mean_psnr(&init);
    let (trained, log) = train(&net, init, &data, &spec, &cfg).unwrap();
    let elapsed = t.elapsed();
    let after = mean_psnr(&trained);

    assert_eq!(log.records.len(), 300);
    let first = log.records[0].loss;
    // the last ten steps smooth out batch-to-batch variation
    let tail = &log.records[log.records.len() - 10..];
    let last = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
    let drop = 1.0 - last / first;
    let gain = after - before;
    let drop_ok = drop >= 0.5;
    let gain_ok = gain >= 5.0;
    let time_ok = elapsed < Duration::from_secs(600);
    let pass = drop_ok && gain_ok && time_ok;
    report(
        8,
        pass,
        &format!(
            "loss {first:.4} -> {last:.4} (drop {:.1}%, >= 50%: {drop_ok}); held-out PSNR {before:.2} -> {after:.2} dB \
             (+{gain:.2}, >= +5: {gain_ok}); {:.0} s (< 600 s)",
            100.0 * drop,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

/// SCAB parameters: two layer norms, three pointwise convs, an 11 x 11
/// depthwise conv and a 2x-expansion feed-forward pair, all with biases.
fn scab_params(c: usize) -> usize {
    2 * c + 3 * (c * c + c) + (121 * c + c) + 2 * c + (2 * c * c + 2 * c) + (2 * c * c + c)
}

/// SCAB multiply-accumulates per pixel.
fn scab_macs(c: usize) -> usize {
    7 * c * c + 121 * c
}

#[test]
fn criterion_09_shared_weights_and_tally() {
    let unshared = |n| count_params_flops(&NetConfig::new(n, 3, 6), 32, 32, 8, 2).unwrap();
    let shared = |n| {
        let cfg = NetConfig {
            share_weights: true,
            ..NetConfig::new(n, 3, 6)
        };
        count_params_flops(&cfg, 32, 32, 8, 2).unwrap()
    };
    // two learned step sizes per stage
    let shared_core: Vec<usize> = (1..=6).map(|n| shared(n).params - 2 * n).collect();
    let independent = shared_core.windows(2).all(|w| w[0] == w[1]);
    let smaller = (2..=6).all(|n| shared(n).params < unshared(n).params);

    // hand tally for k = 3, C = 6, N = 2, one U-Net level, 32 x 32 x 8, step 2
    let (h, w, b, k, c) = (32, 32, 8, 3, 6);
    let lift_params = (k * c + c) + ((k + 1) * c * 9 + c);
    let proxy_e_params = 2 * ((c * 2 * c * 3 + 2 * c) + (2 * c * c * 3 + c));
    let proxy_a_params = scab_params(c)
        + (c * 2 * c * 4 + 2 * c)
        + scab_params(2 * c)
        + (2 * c * c + c)
        + (2 * c * c + c)
        + scab_params(c)
        + (c * c + c);
    let stage_params = 2 + proxy_e_params + proxy_a_params;
    let params = lift_params + 2 * stage_params;

    let hw = h * w;
    let lift_macs = b * c * k + hw * c * (k + 1) * 9;
    let proxy_e_macs = 2 * (b * 2 * c * c * 3 + b * c * 2 * c * 3) + 2 * b * k * k;
    let proxy_a_macs = hw * scab_macs(c)
        + (hw / 4) * 2 * c * c * 4
        + (hw / 4) * scab_macs(2 * c)
        + hw * 2 * c * c
        + hw * 2 * c * c
        + hw * scab_macs(c)
        + hw * c * c;
    let physics_macs = 2 * (2 * hw * b * k) + hw * b * k;
    let macs = lift_macs + 2 * (physics_macs + proxy_e_macs + proxy_a_macs);
    let out_w = w + 2 * (b - 1);
    let elementwise = 2 * (2 * (3 * hw * b + h * out_w) + 2 * b * k + 2 * hw * k);
    let flops = 2 * macs + elementwise;

    let counted = unshared(2);
    let tally_ok = counted.params == params
        && counted.macs == macs as u64
        && counted.flops == flops as u64
        && (params, macs, flops) == (12406, 6_262_704, 12_641_984);
    let pass = independent && smaller && tally_ok;
    report(
        9,
        pass,
        &format!(
            "shared params minus 2N for N = 1..6: {shared_core:?} (constant: {independent}); shared < unshared for N >= 2: {smaller}; \
             toy tally params {} / macs {} / flops {} vs hand {params} / {macs} / {flops}",
            counted.params, counted.macs, counted.flops
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_metrics_and_container() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (h, w, b) = (128, 128, 16);
    let reference =
        HsiCube::new(Array3::from_shape_fn((h, w, b), |_| rng.random::<f64>())).unwrap();
    let noisy = HsiCube::new(Array3::from_shape_fn((h, w, b), |(i, j, k)| {
        reference.data()[[i, j, k]] + 0.1 * rng.sample::<f64, _>(StandardNormal)
    }))
    .unwrap();
    let db = psnr(&noisy, &reference, 1.0).unwrap();
    let psnr_ok = (db - 20.0).abs() <= 0.05;
    let ssim_self = ssim(&reference, &reference).unwrap();
    let ssim_ok = ssim_self == 1.0;

    let dir = tempfile::tempdir().unwrap();
    let mut roundtrip_ok = true;
    let files = [
        TensorFile::from_cube(&reference, DType::F64),
        TensorFile::from_cube(&noisy, DType::F32),
        TensorFile::from_mask(&random_mask(9, 7, 0.5, 1), DType::F64),
        TensorFile::from_measurement(
            &forward(
                &reference,
                &SensingSpec::new(random_mask(h, w, 0.5, 2), b, 2).unwrap(),
            )
            .unwrap(),
            2,
            DType::F64,
        ),
    ];
    for (i, file) in files.iter().enumerate() {
        let path = dir.path().join(format!("t{i}.lrsci"));
        file.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = TensorFile::load(&path).unwrap();
        roundtrip_ok &= back == *file && back.to_bytes().unwrap() == bytes;
    }
    let cube_back = TensorFile::load(dir.path().join("t0.lrsci"))
        .unwrap()
        .to_cube()
        .unwrap();
    roundtrip_ok &= bits(cube_back.as_slice()) == bits(reference.as_slice());

    let pass = psnr_ok && ssim_ok && roundtrip_ok;
    report(
        10,
        pass,
        &format!(
            "PSNR at sigma 0.1 = {db:.4} dB (20 +- 0.05: {psnr_ok}); SSIM(x, x) = {ssim_self} (== 1: {ssim_ok}); \
             LRSCI1 round trips bit-identical: {roundtrip_ok}"
        ),
    );
    assert!(pass);
}
