use std::path::PathBuf;

use anyhow::{bail, Context};
use lrsci_core::cassi::{add_noise, forward};
use lrsci_core::datakit::{random_mask, synth_hsi};
use lrsci_core::tensor_file::{DType, TensorFile};
use lrsci_core::SensingSpec;

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Synthetic scene, e.g. `H=32,W=32,B=8,rank=3[,smoothness=2][,seed=1]`.
    #[arg(long, conflicts_with = "hsi")]
    pub synth: Option<String>,
    /// Hyperspectral cube to measure (LRSCI1, kind hsi).
    #[arg(long)]
    pub hsi: Option<PathBuf>,
    /// Coded aperture (LRSCI1, kind mask); drawn at random when absent.
    #[arg(long, conflicts_with = "mask_density")]
    pub mask: Option<PathBuf>,
    /// Open fraction of a random binary mask.
    #[arg(long)]
    pub mask_density: Option<f64>,
    /// Dispersion shift per band, in pixels.
    #[arg(long, default_value_t = 2)]
    pub step: usize,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Measurement file; `stem.json`, `stem.mask.lrsci` and, for synthetic
    /// scenes, `stem.gt.lrsci` are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(g: &Global, args: Args) -> anyhow::Result<()> {
    let paths = &g.config.paths;
    let out = args
        .out
        .clone()
        .or_else(|| paths.out.clone())
        .context("--out is required")?;
    let hsi = args.hsi.clone().or_else(|| paths.hsi.clone());
    let mask_path = args.mask.clone().or_else(|| paths.mask.clone());
    io::require_parent(&out)?;
    if let Some(p) = &hsi {
        io::require_file(p, "cube")?;
    }
    if let Some(p) = &mask_path {
        io::require_file(p, "mask")?;
    }

    let synth = match (&args.synth, &hsi, &g.config.synth) {
        (Some(text), _, _) => Some(io::parse_synth(text, g.seed)?),
        (None, None, Some(s)) => {
            let mut s = s.clone();
            if g.seed_given {
                s.seed = g.seed;
            }
            s.validate()?;
            Some(s)
        }
        (None, None, None) => bail!("give --synth, --hsi or a [synth] config section"),
        (None, Some(_), _) => None,
    };
    let (cube, gt) = match (&synth, &hsi) {
        (Some(s), _) => (synth_hsi(s)?.cube, true),
        (None, Some(p)) => (io::load_cube(p)?, false),
        (None, None) => unreachable!("checked above"),
    };
    let (h, w, b) = cube.dims();

    let density = args.mask_density.unwrap_or(0.5);
    let mask = match &mask_path {
        Some(p) => {
            let m = io::load_mask(p)?;
            if m.dim() != (h, w) {
                bail!("mask is {:?} but the cube is {h}x{w}", m.dim());
            }
            m
        }
        None => {
            if !(0.0..=1.0).contains(&density) {
                bail!("mask density must lie in [0, 1], got {density}");
            }
            random_mask(h, w, density, g.seed.wrapping_add(1))
        }
    };
    let spec = SensingSpec::new(mask, b, args.step)?;
    let y = add_noise(&forward(&cube, &spec)?, args.noise, g.seed.wrapping_add(2))?;

    let mask_out = io::companion_path(&out, "mask");
    let gt_out = io::companion_path(&out, "gt");
    let sidecar = io::Sidecar {
        height: h,
        width: w,
        bands: b,
        step: args.step,
        noise_sigma: args.noise,
        seed: g.seed,
        measurement: io::file_name(&out),
        mask: io::file_name(&mask_out),
        ground_truth: gt.then(|| io::file_name(&gt_out)),
        synth: synth.clone(),
        mask_density: mask_path.is_none().then_some(density),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;

    // everything is computed before the first write
    if gt {
        io::save(&TensorFile::from_cube(&cube, DType::F64), &gt_out)?;
    }
    io::save(&TensorFile::from_mask(spec.mask(), DType::F64), &mask_out)?;
    io::save(
        &TensorFile::from_measurement(&y, args.step, DType::F64),
        &out,
    )?;
    io::write_text(&io::sidecar_path(&out), &(json + "\n"))?;
    log::info!("wrote {} ({h}x{})", out.display(), spec.out_width());
    Ok(())
}
