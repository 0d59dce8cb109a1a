use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::bail;
use lrsci_core::datakit::{capped, psnr, ssim};
use rayon::prelude::*;

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Reconstructed cubes.
    #[arg(long, num_args = 1.., required = true)]
    pub x: Vec<PathBuf>,
    /// Reference cubes, paired with `--x` in order.
    #[arg(long, num_args = 1.., required = true)]
    pub reference: Vec<PathBuf>,
    /// Metric CSV (scene,psnr_db,ssim); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One row of the metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub scene: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

fn scene_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Scores each pair; PSNR is capped for identical inputs.
pub fn score_pairs(pairs: &[(PathBuf, PathBuf)]) -> anyhow::Result<Vec<Score>> {
    pairs
        .par_iter()
        .map(|(x, r)| {
            let (xc, rc) = (io::load_cube(x)?, io::load_cube(r)?);
            Ok(Score {
                scene: scene_name(x),
                psnr_db: capped(psnr(&xc, &rc, 1.0)?),
                ssim: ssim(&xc, &rc)?,
            })
        })
        .collect()
}

pub fn to_csv(scores: &[Score]) -> String {
    let mut s = String::from("scene,psnr_db,ssim\n");
    for r in scores {
        writeln!(s, "{},{:.6},{:.6}", r.scene, r.psnr_db, r.ssim).expect("string write");
    }
    s
}

pub fn run(_g: &Global, args: Args) -> anyhow::Result<()> {
    if args.x.len() != args.reference.len() {
        bail!(
            "{} reconstructions but {} references",
            args.x.len(),
            args.reference.len()
        );
    }
    for p in args.x.iter().chain(&args.reference) {
        io::require_file(p, "cube")?;
    }
    if let Some(p) = &args.out {
        io::require_parent(p)?;
    }
    let pairs: Vec<_> = args
        .x
        .iter()
        .cloned()
        .zip(args.reference.iter().cloned())
        .collect();
    let csv = to_csv(&score_pairs(&pairs)?);
    match &args.out {
        Some(p) => io::write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
