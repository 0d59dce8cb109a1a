use std::path::PathBuf;

use anyhow::{bail, Context};
use lrsci_core::datakit::{random_mask, synth_hsi, SynthSpec};
use lrsci_core::tensor_file::{DType, TensorFile};
use lrsci_core::{HsiCube, SensingSpec};
use lrsci_net::{weights, Lrdun, NetConfig, TrainConfig};

use crate::{io, Global};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Training cubes (LRSCI1, kind hsi); synthetic scenes are drawn when absent.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Shape of the synthetic scenes [default: H=32,W=32,B=8,rank=3].
    #[arg(long)]
    pub synth: Option<String>,
    /// Number of synthetic training scenes (seeds `seed .. seed + count`).
    #[arg(long, default_value_t = 16)]
    pub synth_count: usize,
    /// Training patch size; defaults to the full cube.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Mask (LRSCI1, kind mask) fixing the patch geometry.
    #[arg(long, conflicts_with = "mask_density")]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub mask_density: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub step: usize,

    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature channels per factor.
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub share_weights: bool,
    #[arg(long)]
    pub unet_depth: Option<usize>,
    #[arg(long)]
    pub scab_kernel: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Evaluate batch samples on the thread pool.
    #[arg(long)]
    pub parallel: bool,

    /// Trained weights.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss log (CSV: step,loss,lr).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the weights as initialized, before any update.
    #[arg(long)]
    pub init_snapshot: Option<PathBuf>,
}

impl Args {
    fn net_config(&self, g: &Global) -> NetConfig {
        let mut cfg = g
            .config
            .net
            .clone()
            .unwrap_or_else(|| NetConfig::new(2, 3, 6));
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(stages, k, c, unet_depth, scab_kernel);
        if self.share_weights {
            cfg.share_weights = true;
        }
        if g.seed_given || g.config.net.is_none() {
            cfg.seed = g.seed;
        }
        cfg
    }

    fn train_config(&self, g: &Global) -> TrainConfig {
        let mut cfg = g.config.train.clone().unwrap_or_default();
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
        if self.parallel {
            cfg.parallel = true;
        }
        if g.seed_given || g.config.train.is_none() {
            cfg.seed = g.seed;
        }
        cfg
    }
}

fn dataset(g: &Global, args: &Args) -> anyhow::Result<Vec<HsiCube>> {
    if !args.data.is_empty() {
        return args.data.iter().map(|p| io::load_cube(p)).collect();
    }
    let base: SynthSpec = match (&args.synth, &g.config.synth) {
        (Some(text), _) => io::parse_synth(text, g.seed)?,
        (None, Some(s)) => {
            let mut s = s.clone();
            if g.seed_given {
                s.seed = g.seed;
            }
            s
        }
        (None, None) => SynthSpec::new(32, 32, 8, 3, g.seed),
    };
    if args.synth_count == 0 {
        bail!("--synth-count must be >= 1");
    }
    (0..args.synth_count as u64)
        .map(|i| {
            let spec = SynthSpec {
                seed: base.seed.wrapping_add(i),
                ..base.clone()
            };
            Ok(synth_hsi(&spec)?.cube)
        })
        .collect()
}

pub fn run(g: &Global, args: Args) -> anyhow::Result<()> {
    let paths = &g.config.paths;
    let out = args
        .out
        .clone()
        .or_else(|| paths.weights.clone())
        .context("--out is required")?;
    let log_path = args.log.clone().or_else(|| paths.log.clone());
    let mask_path = args.mask.clone().or_else(|| paths.mask.clone());
    for p in [Some(&out), log_path.as_ref(), args.init_snapshot.as_ref()]
        .into_iter()
        .flatten()
    {
        io::require_parent(p)?;
    }
    for p in &args.data {
        io::require_file(p, "training cube")?;
    }
    if let Some(p) = &mask_path {
        io::require_file(p, "mask")?;
    }
    let net_cfg = args.net_config(g);
    let train_cfg = args.train_config(g);
    net_cfg.validate()?;
    train_cfg.validate()?;

    let data = dataset(g, &args)?;
    let (h, w, b) = data[0].dims();
    if data.iter().any(|x| x.bands() != b) {
        bail!("training cubes disagree on the band count");
    }
    let min_h = data.iter().map(|x| x.height()).min().unwrap_or(h);
    let min_w = data.iter().map(|x| x.width()).min().unwrap_or(w);
    let mask = match &mask_path {
        Some(p) => io::load_mask(p)?,
        None => {
            let (ph, pw) = match args.patch {
                Some(s) => (s, s),
                None => (min_h, min_w),
            };
            let density = args.mask_density.unwrap_or(0.5);
            if !(0.0..=1.0).contains(&density) {
                bail!("mask density must lie in [0, 1], got {density}");
            }
            random_mask(ph, pw, density, g.seed.wrapping_add(1))
        }
    };
    if mask.nrows() > min_h || mask.ncols() > min_w {
        bail!(
            "patch {:?} is larger than the smallest training cube ({min_h}x{min_w})",
            mask.dim()
        );
    }
    let spec = SensingSpec::new(mask, b, args.step)?;

    let net = Lrdun::new(net_cfg.clone())?;
    let init = lrsci_net::train::prepare(&net, &data, &spec, &train_cfg)?;
    if let Some(p) = &args.init_snapshot {
        io::save(&weights::to_file(&net_cfg, &init)?, p)?;
    }
    log::info!(
        "training {} parameters on {} cubes, {} steps",
        init.count(),
        data.len(),
        train_cfg.total_steps(data.len())
    );
    let result = lrsci_net::train(&net, init, &data, &spec, &train_cfg);
    let (params, train_log) = match result {
        Ok(r) => r,
        Err(lrsci_net::NetError::TrainingDiverged { step, log }) => {
            if let Some(p) = &log_path {
                write_log(p, &log)?;
            }
            return Err(lrsci_net::NetError::TrainingDiverged { step, log }.into());
        }
        Err(e) => return Err(e.into()),
    };
    io::save(&weights::to_file(&net_cfg, &params)?, &out)?;
    if mask_path.is_none() {
        let mask_out = io::companion_path(&out, "mask");
        io::save(&TensorFile::from_mask(spec.mask(), DType::F64), &mask_out)?;
    }
    if let Some(p) = &log_path {
        write_log(p, &train_log)?;
    }
    if let (Some(first), Some(last)) = (train_log.records.first(), train_log.records.last()) {
        println!(
            "loss {:.6} -> {:.6} over {} steps",
            first.loss, last.loss, last.step
        );
    }
    Ok(())
}

fn write_log(path: &std::path::Path, log: &lrsci_net::TrainLog) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    io::write_text(path, &String::from_utf8(buf)?)
}
