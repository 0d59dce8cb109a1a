//! File helpers shared by the commands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lrsci_core::datakit::SynthSpec;
use lrsci_core::tensor_file::{write_atomic, TensorFile};
use lrsci_core::{HsiCube, Measurement};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// JSON record written next to every simulated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub step: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub measurement: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_density: Option<f64>,
}

/// `dir/stem.json` for `dir/stem.lrsci`.
pub fn sidecar_path(meas: &Path) -> PathBuf {
    meas.with_extension("json")
}

/// `dir/stem.<tag>.lrsci` for `dir/stem.lrsci`.
pub fn companion_path(meas: &Path, tag: &str) -> PathBuf {
    let stem = meas
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    meas.with_file_name(format!("{stem}.{tag}.lrsci"))
}

pub fn read_sidecar(meas: &Path) -> anyhow::Result<Option<Sidecar>> {
    let path = sidecar_path(meas);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let car = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(car))
}

/// Sidecar paths are stored relative to the sidecar's directory.
pub fn resolve_beside(meas: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        meas.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// File name component only, for paths recorded in a sidecar.
pub fn file_name(p: &Path) -> PathBuf {
    p.file_name()
        .map(PathBuf::from)
        .unwrap_or_else(|| p.to_path_buf())
}

/// Mask for a measurement: the explicit path, else the sidecar entry, else
/// `stem.mask.lrsci`.
pub fn resolve_mask(explicit: Option<&Path>, meas: &Path) -> anyhow::Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Some(car) = read_sidecar(meas)? {
        return Ok(resolve_beside(meas, &car.mask));
    }
    let fallback = companion_path(meas, "mask");
    if fallback.exists() {
        return Ok(fallback);
    }
    bail!("no mask given and none found beside {}", meas.display())
}

pub fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(())
}

/// The directory that will receive `p` must already exist.
pub fn require_parent(p: &Path) -> anyhow::Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

pub fn load_cube(p: &Path) -> anyhow::Result<HsiCube> {
    TensorFile::load(p)
        .and_then(|f| f.to_cube())
        .with_context(|| format!("reading cube {}", p.display()))
}

pub fn load_mask(p: &Path) -> anyhow::Result<Array2<f64>> {
    TensorFile::load(p)
        .and_then(|f| f.to_mask())
        .with_context(|| format!("reading mask {}", p.display()))
}

/// The measurement and the dispersion step recorded in its header.
pub fn load_measurement(p: &Path) -> anyhow::Result<(Measurement, Option<usize>)> {
    let file =
        TensorFile::load(p).with_context(|| format!("reading measurement {}", p.display()))?;
    let y = file
        .to_measurement()
        .with_context(|| format!("reading measurement {}", p.display()))?;
    Ok((y, file.header.step))
}

/// Bands implied by a measurement width, mask width and step.
pub fn infer_bands(meas_width: usize, mask_width: usize, step: usize) -> anyhow::Result<usize> {
    if meas_width < mask_width {
        bail!("measurement is narrower ({meas_width}) than the mask ({mask_width})");
    }
    let extra = meas_width - mask_width;
    if step == 0 {
        bail!("cannot infer the band count with step 0; record it in the sidecar");
    }
    if !extra.is_multiple_of(step) {
        bail!("measurement width {meas_width} is inconsistent with mask width {mask_width} and step {step}");
    }
    Ok(extra / step + 1)
}

pub fn write_text(p: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))
}

pub fn save(file: &TensorFile, p: &Path) -> anyhow::Result<()> {
    file.save(p)
        .with_context(|| format!("writing {}", p.display()))
}

/// Parses `H=32,W=32,B=8,rank=3[,smoothness=2][,seed=5]`.
pub fn parse_synth(text: &str, seed: u64) -> anyhow::Result<SynthSpec> {
    let mut spec = SynthSpec::new(0, 0, 0, 0, seed);
    let mut rank_set = false;
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((key, value)) = part.split_once('=') else {
            bail!("expected key=value in synthetic spec, got '{part}'");
        };
        let int = || -> anyhow::Result<usize> {
            value
                .trim()
                .parse()
                .with_context(|| format!("bad value for {key}: '{value}'"))
        };
        match key.trim() {
            "H" | "h" | "height" => spec.height = int()?,
            "W" | "w" | "width" => spec.width = int()?,
            "B" | "b" | "bands" => spec.bands = int()?,
            "rank" | "k" => {
                spec.rank = int()?;
                rank_set = true;
            }
            "smoothness" => {
                spec.smoothness = value
                    .trim()
                    .parse()
                    .with_context(|| format!("bad smoothness '{value}'"))?
            }
            "seed" => spec.seed = int()? as u64,
            other => bail!("unknown synthetic spec key '{other}'"),
        }
    }
    if !rank_set {
        spec.rank = spec.bands.min(3);
    }
    spec.validate()?;
    Ok(spec)
}
