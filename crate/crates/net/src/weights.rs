//! Weights in the LRSCI1 container.

use std::path::Path;

use lrsci_core::tensor_file::{DType, ManifestEntry, TensorFile, TensorKind};

use crate::error::{invalid, Result};
use crate::lrdun::{Lrdun, NetConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Flat `f64` payload with a manifest of names and shapes and the config.
pub fn to_file(cfg: &NetConfig, params: &ParamSet) -> Result<TensorFile> {
    let values = params.flatten();
    let mut file = TensorFile::new(TensorKind::Weights, vec![values.len()], values, DType::F64)?;
    file.header.manifest = Some(
        params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| ManifestEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    );
    file.header.config = Some(serde_json::to_value(cfg).expect("config serializes"));
    Ok(file)
}

/// Rebuilds the network and its parameters, checking the manifest against
/// the layout the stored config implies.
pub fn from_file(file: &TensorFile) -> Result<(Lrdun, ParamSet)> {
    if file.header.kind != TensorKind::Weights {
        return invalid(format!(
            "expected a weights file, got {:?}",
            file.header.kind
        ));
    }
    let Some(cfg) = &file.header.config else {
        return invalid("weights file has no network config");
    };
    let cfg: NetConfig = serde_json::from_value(cfg.clone())
        .map_err(|e| crate::error::NetError::InvalidArgument(format!("network config: {e}")))?;
    let Some(manifest) = &file.header.manifest else {
        return invalid("weights file has no manifest");
    };
    let net = Lrdun::new(cfg)?;
    let values = file.payload.to_f64();
    let mut offset = 0;
    let mut names = Vec::with_capacity(manifest.len());
    let mut tensors = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let n: usize = entry.shape.iter().product();
        if offset + n > values.len() {
            return invalid("weights payload shorter than its manifest");
        }
        tensors.push(Tensor::new(
            entry.shape.clone(),
            values[offset..offset + n].to_vec(),
        )?);
        names.push(entry.name.clone());
        offset += n;
    }
    if offset != values.len() {
        return invalid("weights payload longer than its manifest");
    }
    let params = ParamSet::new(names, tensors)?;
    params.check(net.registry())?;
    Ok((net, params))
}

pub fn save(path: impl AsRef<Path>, cfg: &NetConfig, params: &ParamSet) -> Result<()> {
    Ok(to_file(cfg, params)?.save(path)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<(Lrdun, ParamSet)> {
    from_file(&TensorFile::load(path)?)
}
