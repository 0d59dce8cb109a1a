//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use lrsci_core::datakit::SynthSpec;
use lrsci_core::solver::SolverConfig;
use lrsci_net::{NetConfig, TrainConfig};
use serde::Deserialize;

/// Every section is optional; keys inside a section are exactly the field
/// names of the corresponding typed configuration.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: Option<SolverConfig>,
    pub net: Option<NetConfig>,
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub hsi: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Flag value, else config value.
pub fn pick<T: Clone>(flag: &Option<T>, cfg: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| cfg.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let cfg = RunConfig::parse(
            r#"
            [solver]
            k = 4
            prox_a = "tv2d"
            lambda_a = 0.01
            rho_e = "auto"
            rho_a = 0.5

            [net]
            stages = 2
            k = 3
            c = 6

            [paths]
            measurement = "m.lrsci"
            "#,
        )
        .unwrap();
        let s = cfg.solver.unwrap();
        assert_eq!(s.k, 4);
        assert_eq!(s.max_iters, 500);
        assert_eq!(cfg.net.unwrap().c, 6);
        assert_eq!(cfg.paths.measurement.unwrap(), PathBuf::from("m.lrsci"));

        assert!(RunConfig::parse("[solver]\nk = 3\nbogus = 1\n").is_err());
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("[paths]\nwhere = \"x\"\n").is_err());
    }
}
