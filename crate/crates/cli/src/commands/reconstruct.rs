use std::path::PathBuf;

use anyhow::Context;
use lrsci_core::datakit::{capped, psnr};
use lrsci_core::tensor_file::{DType, TensorFile};

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Trained weights from `train`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub meas: Option<PathBuf>,
    /// Defaults to the mask recorded beside the measurement.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    /// Ground truth for a PSNR printout; defaults to the sidecar entry.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Reconstructed cube.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(g: &Global, args: Args) -> anyhow::Result<()> {
    let paths = &g.config.paths;
    let weights_path = args
        .weights
        .clone()
        .or_else(|| paths.weights.clone())
        .context("--weights is required")?;
    let meas = args
        .meas
        .clone()
        .or_else(|| paths.measurement.clone())
        .context("--meas is required")?;
    let out = args
        .out
        .clone()
        .or_else(|| paths.out.clone())
        .context("--out is required")?;
    io::require_file(&weights_path, "weights")?;
    io::require_parent(&out)?;
    let mask = args.mask.clone().or_else(|| paths.mask.clone());
    let scene = super::load_scene(&meas, mask.as_deref(), args.step, args.bands)?;

    let (net, params) = lrsci_net::weights::load(&weights_path)
        .with_context(|| format!("reading weights {}", weights_path.display()))?;
    let rec = net.reconstruct(&params, &scene.y, &scene.spec)?;
    let x = rec.cube();
    io::save(&TensorFile::from_cube(x, DType::F64), &out)?;

    let reference = super::reference_path(
        args.reference.as_ref().or(paths.reference.as_ref()),
        &meas,
        scene.sidecar.as_ref(),
    );
    if let Some(p) = reference.filter(|p| p.is_file()) {
        println!("psnr_db {:.4}", capped(psnr(x, &io::load_cube(&p)?, 1.0)?));
    }
    Ok(())
}
