//! Library side of the `lrsci` tool: simulate CASSI measurements, reconstruct them with the
//! classical low-rank solver or the unfolding network, and score results.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod io;
pub mod oracle;

use commands::{eval, reconstruct, report, simulate, solve, train};

#[derive(Parser, Debug)]
#[command(
    name = "lrsci",
    version,
    about = "Low-rank spectral compressive imaging toolkit"
)]
pub struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel regions (batch evaluation, per-channel TV).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a snapshot measurement from a cube or a synthetic scene.
    Simulate(simulate::Args),
    /// Reconstruct with the classical alternating solver.
    Solve(solve::Args),
    /// Train the unfolding network on synthetic scenes.
    Train(train::Args),
    /// Reconstruct with trained network weights.
    Reconstruct(reconstruct::Args),
    /// Score reconstructions against references (PSNR, SSIM).
    Eval(eval::Args),
    /// Run the explicit-matrix, adjoint and gradient oracles.
    OracleCheck(commands::oracle_check::Args),
    /// Emit per-band PSNR and loss curves as CSV.
    Report(report::Args),
}

pub struct Global {
    pub seed: u64,
    /// True when `--seed` was passed explicitly.
    pub seed_given: bool,
    pub config: config::RunConfig,
}

/// Process exit codes.
pub mod exit {
    pub const INVALID: u8 = 2;
    pub const DIVERGED: u8 = 3;
    pub const ORACLE: u8 = 4;
}

/// Marks an oracle mismatch.
#[derive(Debug)]
pub struct OracleFailure(pub String);

impl std::fmt::Display for OracleFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "oracle failure: {}", self.0)
    }
}

impl std::error::Error for OracleFailure {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<OracleFailure>().is_some() {
        return exit::ORACLE;
    }
    for cause in err.chain() {
        if let Some(lrsci_core::Error::Diverged { .. }) = cause.downcast_ref() {
            return exit::DIVERGED;
        }
        if let Some(
            lrsci_net::NetError::Diverged(_) | lrsci_net::NetError::TrainingDiverged { .. },
        ) = cause.downcast_ref()
        {
            return exit::DIVERGED;
        }
    }
    exit::INVALID
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let config = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    let global = Global {
        seed: cli.seed.unwrap_or(0),
        seed_given: cli.seed.is_some(),
        config,
    };
    match cli.command {
        Command::Simulate(a) => simulate::run(&global, a),
        Command::Solve(a) => solve::run(&global, a),
        Command::Train(a) => train::run(&global, a),
        Command::Reconstruct(a) => reconstruct::run(&global, a),
        Command::Eval(a) => eval::run(&global, a),
        Command::OracleCheck(a) => commands::oracle_check::run(&global, a),
        Command::Report(a) => report::run(&global, a),
    }
}
