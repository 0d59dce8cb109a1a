use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lrsci_core::datakit::{capped, psnr_per_band};

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Reconstruction for the per-band PSNR curve.
    #[arg(long, requires = "reference")]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Training log from `train --log`.
    #[arg(long)]
    pub train_log: Option<PathBuf>,
    /// Solver trace from `solve`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Receives per_band_psnr.csv and loss_curve.csv / objective_curve.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Keeps the first two columns of a CSV, dropping `#` comment lines.
fn curve(path: &Path, header: &str) -> anyhow::Result<String> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = format!("{header}\n");
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mut cols = line.split(',');
        match (cols.next(), cols.next()) {
            (Some(a), Some(b)) => writeln!(out, "{a},{b}").expect("string write"),
            _ => bail!("malformed line in {}: '{line}'", path.display()),
        }
    }
    Ok(out)
}

pub fn run(_g: &Global, args: Args) -> anyhow::Result<()> {
    if args.x.is_none() && args.train_log.is_none() && args.trace.is_none() {
        bail!("nothing to report; give --x/--reference, --train-log or --trace");
    }
    for p in [&args.x, &args.reference, &args.train_log, &args.trace]
        .into_iter()
        .flatten()
    {
        io::require_file(p, "input")?;
    }
    let mut outputs = Vec::new();
    if let (Some(x), Some(r)) = (&args.x, &args.reference) {
        let db = psnr_per_band(&io::load_cube(x)?, &io::load_cube(r)?, 1.0)?;
        let mut csv = String::from("band,psnr_db\n");
        for (b, v) in db.iter().enumerate() {
            writeln!(csv, "{b},{:.6}", capped(*v)).expect("string write");
        }
        outputs.push(("per_band_psnr.csv", csv));
    }
    if let Some(p) = &args.train_log {
        outputs.push(("loss_curve.csv", curve(p, "step,loss")?));
    }
    if let Some(p) = &args.trace {
        outputs.push(("objective_curve.csv", curve(p, "iter,objective")?));
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, csv) in outputs {
        io::write_text(&args.out_dir.join(name), &csv)?;
    }
    Ok(())
}
