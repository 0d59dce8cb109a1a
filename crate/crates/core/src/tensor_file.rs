//! `LRSCI1` tensor container.
//!
//! Layout: the 7-byte magic `LRSCI1\n`, a little-endian `u32` metadata
//! length `L`, `L` bytes of JSON metadata, then the raw little-endian
//! payload in row-major order (slowest-varying axis first).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cassi::{HsiCube, Measurement};
use crate::error::{Error, Result};
use crate::lowrank::{SpectralBasis, SubspaceImages};

pub const MAGIC: &[u8; 7] = b"LRSCI1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Hsi,
    Mask,
    Meas,
    Basis,
    Subspace,
    Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

/// One named tensor inside a `weights` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: TensorKind,
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Layer manifest, `weights` files only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Vec<ManifestEntry>>,
    /// Network configuration, `weights` files only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }

    fn from_f64(values: Vec<f64>, dtype: DType) -> Self {
        match dtype {
            DType::F64 => Payload::F64(values),
            DType::F32 => Payload::F32(values.into_iter().map(|x| x as f32).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub header: Header,
    pub payload: Payload,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl TensorFile {
    pub fn new(
        kind: TensorKind,
        shape: Vec<usize>,
        values: Vec<f64>,
        dtype: DType,
    ) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            header: Header {
                kind,
                dtype,
                shape,
                step: None,
                noise_sigma: None,
                manifest: None,
                config: None,
            },
            payload: Payload::from_f64(values, dtype),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.header.dtype != self.payload.dtype() {
            return Err(Error::InvalidArgument(
                "header dtype does not match payload".into(),
            ));
        }
        let meta = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(meta.len())
            .map_err(|_| Error::InvalidArgument("metadata exceeds 4 GiB".into()))?;
        let width = match self.payload.dtype() {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let mut out = Vec::with_capacity(11 + meta.len() + width * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&meta);
        match &self.payload {
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 11 || &bytes[..7] != MAGIC {
            return format_err("missing LRSCI1 magic");
        }
        let len = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
        let Some(meta) = bytes.get(11..11 + len) else {
            return format_err("truncated metadata");
        };
        let header: Header = serde_json::from_slice(meta)?;
        let count: usize = header.shape.iter().product();
        let body = &bytes[11 + len..];
        let payload = match header.dtype {
            DType::F32 => {
                if body.len() != 4 * count {
                    return format_err(format!(
                        "expected {} payload bytes, found {}",
                        4 * count,
                        body.len()
                    ));
                }
                Payload::F32(
                    body.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            }
            DType::F64 => {
                if body.len() != 8 * count {
                    return format_err(format!(
                        "expected {} payload bytes, found {}",
                        8 * count,
                        body.len()
                    ));
                }
                Payload::F64(
                    body.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            }
        };
        Ok(Self { header, payload })
    }

    /// Writes to a temporary file in the target directory, then renames it
    /// into place, so a failed write never leaves a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn expect_kind(&self, kind: TensorKind, rank: usize) -> Result<()> {
        if self.header.kind != kind {
            return format_err(format!(
                "expected kind {kind:?}, found {:?}",
                self.header.kind
            ));
        }
        if self.header.shape.len() != rank {
            return format_err(format!(
                "expected rank-{rank} shape, found {:?}",
                self.header.shape
            ));
        }
        Ok(())
    }

    pub fn from_cube(x: &HsiCube, dtype: DType) -> Self {
        let (h, w, b) = x.dims();
        Self::new(TensorKind::Hsi, vec![h, w, b], x.as_slice().to_vec(), dtype)
            .expect("shape consistent")
    }

    pub fn to_cube(&self) -> Result<HsiCube> {
        self.expect_kind(TensorKind::Hsi, 3)?;
        let s = &self.header.shape;
        HsiCube::new(
            Array3::from_shape_vec((s[0], s[1], s[2]), self.payload.to_f64()).expect("checked"),
        )
    }

    pub fn from_mask(mask: &Array2<f64>, dtype: DType) -> Self {
        let m = mask.as_standard_layout();
        Self::new(
            TensorKind::Mask,
            vec![m.nrows(), m.ncols()],
            m.iter().copied().collect(),
            dtype,
        )
        .expect("shape consistent")
    }

    pub fn to_mask(&self) -> Result<Array2<f64>> {
        self.expect_kind(TensorKind::Mask, 2)?;
        let s = &self.header.shape;
        Ok(Array2::from_shape_vec((s[0], s[1]), self.payload.to_f64()).expect("checked"))
    }

    pub fn from_measurement(y: &Measurement, step: usize, dtype: DType) -> Self {
        let (h, wp) = y.data.dim();
        let mut t = Self::new(TensorKind::Meas, vec![h, wp], y.as_slice().to_vec(), dtype)
            .expect("shape consistent");
        t.header.step = Some(step);
        t.header.noise_sigma = Some(y.noise_sigma);
        t
    }

    pub fn to_measurement(&self) -> Result<Measurement> {
        self.expect_kind(TensorKind::Meas, 2)?;
        let s = &self.header.shape;
        let mut y = Measurement::new(
            Array2::from_shape_vec((s[0], s[1]), self.payload.to_f64()).expect("checked"),
        );
        y.noise_sigma = self.header.noise_sigma.unwrap_or(0.0);
        Ok(y)
    }

    /// Basis stored as `[B, k]`.
    pub fn from_basis(e: &SpectralBasis, dtype: DType) -> Self {
        let m = e.matrix();
        let values = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self::new(TensorKind::Basis, vec![m.nrows(), m.ncols()], values, dtype)
            .expect("shape consistent")
    }

    pub fn to_basis(&self) -> Result<SpectralBasis> {
        self.expect_kind(TensorKind::Basis, 2)?;
        let s = &self.header.shape;
        SpectralBasis::new(DMatrix::from_row_slice(s[0], s[1], &self.payload.to_f64()))
    }

    /// Subspace images stored as `[H, W, k]`.
    pub fn from_subspace(a: &SubspaceImages, dtype: DType) -> Self {
        let arr = a.to_array();
        let (h, w, k) = arr.dim();
        Self::new(
            TensorKind::Subspace,
            vec![h, w, k],
            arr.iter().copied().collect(),
            dtype,
        )
        .expect("shape consistent")
    }

    pub fn to_subspace(&self) -> Result<SubspaceImages> {
        self.expect_kind(TensorKind::Subspace, 3)?;
        let s = &self.header.shape;
        SubspaceImages::from_array(
            &Array3::from_shape_vec((s[0], s[1], s[2]), self.payload.to_f64()).expect("checked"),
        )
    }
}

/// Temp-file-then-rename write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
