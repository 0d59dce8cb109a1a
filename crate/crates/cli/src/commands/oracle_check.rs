use crate::oracle;
use crate::{Global, OracleFailure};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Skip the network gradient checks.
    #[arg(long)]
    pub skip_network: bool,
}

pub fn run(g: &Global, args: Args) -> anyhow::Result<()> {
    let checks = oracle::all_checks(g.seed, !args.skip_network)?;
    for c in &checks {
        println!("{c}");
    }
    match checks.iter().find(|c| !c.passed()) {
        Some(c) => Err(OracleFailure(c.to_string()).into()),
        None => Ok(()),
    }
}
