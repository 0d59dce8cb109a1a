pub mod eval;
pub mod oracle_check;
pub mod reconstruct;
pub mod report;
pub mod simulate;
pub mod solve;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;
use lrsci_core::SensingSpec;

use crate::io;

/// Measurement, sensing geometry and the paths they came from.
pub(crate) struct MeasuredScene {
    pub y: lrsci_core::Measurement,
    pub spec: SensingSpec,
    pub sidecar: Option<io::Sidecar>,
}

/// Loads a measurement with its mask; the step comes from the flag, the
/// measurement header or the sidecar, in that order.
pub(crate) fn load_scene(
    meas: &Path,
    mask: Option<&Path>,
    step: Option<usize>,
    bands: Option<usize>,
) -> anyhow::Result<MeasuredScene> {
    io::require_file(meas, "measurement")?;
    let mask_path = io::resolve_mask(mask, meas)?;
    io::require_file(&mask_path, "mask")?;
    let (y, header_step) = io::load_measurement(meas)?;
    let mask = io::load_mask(&mask_path)?;
    let sidecar = io::read_sidecar(meas)?;
    let step = step
        .or(header_step)
        .or(sidecar.as_ref().map(|s| s.step))
        .context("dispersion step unknown; pass --step")?;
    let bands = match bands.or(sidecar.as_ref().map(|s| s.bands)) {
        Some(b) => b,
        None => io::infer_bands(y.data.ncols(), mask.ncols(), step)?,
    };
    let spec = SensingSpec::new(mask, bands, step)?;
    spec.check_measurement(&y)?;
    Ok(MeasuredScene { y, spec, sidecar })
}

/// Ground truth for reporting: explicit path, else the sidecar entry.
pub(crate) fn reference_path(
    explicit: Option<&PathBuf>,
    meas: &Path,
    sidecar: Option<&io::Sidecar>,
) -> Option<PathBuf> {
    explicit.cloned().or_else(|| {
        sidecar
            .and_then(|s| s.ground_truth.as_ref())
            .map(|p| io::resolve_beside(meas, p))
    })
}
