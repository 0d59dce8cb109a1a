use std::path::PathBuf;

use anyhow::Context;
use lrsci_core::datakit::{capped, psnr};
use lrsci_core::prox::ProxKind;
use lrsci_core::solver::{solve_alternating, SolveTrace, SolverConfig, StepSize};
use lrsci_core::tensor_file::{DType, TensorFile};
use lrsci_core::Error;

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Measurement file (LRSCI1, kind meas).
    #[arg(long)]
    pub meas: Option<PathBuf>,
    /// Mask file; defaults to the one recorded beside the measurement.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Ground truth for a PSNR printout; defaults to the sidecar entry.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Receives E.lrsci, A.lrsci, X.lrsci and trace.csv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Dispersion step when the measurement does not record one.
    #[arg(long)]
    pub step: Option<usize>,
    /// Band count when it cannot be inferred.
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// `auto` or a positive number.
    #[arg(long)]
    pub rho_e: Option<StepSize>,
    #[arg(long)]
    pub rho_a: Option<StepSize>,
    /// identity, soft_threshold, tv2d or qr_orthonormalize (short: none, soft, tv, qr).
    #[arg(long)]
    pub prox_e: Option<ProxKind>,
    #[arg(long)]
    pub prox_a: Option<ProxKind>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    /// Stop once the relative residual drops below this.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl Args {
    fn solver_config(&self, g: &Global) -> SolverConfig {
        let mut cfg = g.config.solver.clone().unwrap_or_default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(k, max_iters, rho_e, rho_a, prox_e, prox_a, lambda_e, lambda_a, tol);
        if g.seed_given || g.config.solver.is_none() {
            cfg.seed = g.seed;
        }
        cfg
    }
}

fn write_trace(
    path: &std::path::Path,
    trace: &SolveTrace,
    cfg: &SolverConfig,
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf, &cfg.describe())?;
    io::write_text(path, &String::from_utf8(buf)?)
}

pub fn run(g: &Global, args: Args) -> anyhow::Result<()> {
    let paths = &g.config.paths;
    let meas = args
        .meas
        .clone()
        .or_else(|| paths.measurement.clone())
        .context("--meas is required")?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| paths.out_dir.clone())
        .context("--out-dir is required")?;
    let mask = args.mask.clone().or_else(|| paths.mask.clone());
    let cfg = args.solver_config(g);
    cfg.validate()?;
    let scene = super::load_scene(&meas, mask.as_deref(), args.step, args.bands)?;
    let reference = super::reference_path(
        args.reference.as_ref().or(paths.reference.as_ref()),
        &meas,
        scene.sidecar.as_ref(),
    );
    let reference = match reference {
        Some(p) if p.is_file() => Some(io::load_cube(&p)?),
        Some(p) if args.reference.is_some() => {
            anyhow::bail!("reference {} does not exist", p.display())
        }
        _ => None,
    };
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let trace_path = out_dir.join("trace.csv");
    let sol = match solve_alternating(&scene.y, &scene.spec, &cfg) {
        Ok(sol) => sol,
        Err(Error::Diverged { iteration, trace }) => {
            if let Some(t) = &trace {
                write_trace(&trace_path, t, &cfg)?;
            }
            return Err(Error::Diverged { iteration, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };

    io::save(
        &TensorFile::from_basis(&sol.basis, DType::F64),
        &out_dir.join("E.lrsci"),
    )?;
    io::save(
        &TensorFile::from_subspace(&sol.subspace, DType::F64),
        &out_dir.join("A.lrsci"),
    )?;
    io::save(
        &TensorFile::from_cube(&sol.cube, DType::F64),
        &out_dir.join("X.lrsci"),
    )?;
    write_trace(&trace_path, &sol.trace, &cfg)?;

    if let Some(last) = sol.trace.records.last() {
        println!(
            "iterations {} rel_residual {:.3e}",
            last.iter, last.rel_residual
        );
    }
    if let Some(x) = reference {
        println!("psnr_db {:.4}", capped(psnr(&sol.cube, &x, 1.0)?));
    }
    Ok(())
}
