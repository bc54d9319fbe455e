//! Binary checkpoint: `LFXCKPT1`, little-endian u64 header length, JSON
//! header, then every tensor as raw little-endian scalars in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"LFXCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// What the tensors belong to, e.g. `denoiser`, `adapter`, `control`.
    pub kind: String,
    pub dtype: String,
    /// Free-form description needed to rebuild the owning model.
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

pub fn encode_checkpoint<S: Scalar>(kind: &str, meta: serde_json::Value, params: &ParamSet<S>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        dtype: S::DTYPE.to_string(),
        meta,
        tensors: params.entries().iter().map(|e| TensorInfo { name: e.name.clone(), shape: e.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.num_scalars() * S::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in params.entries() {
        for &v in &e.value {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Reads only the header, without checking the dtype.
pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic bytes".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..end])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.version)));
    }
    Ok((header, end))
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(CheckpointHeader, ParamSet<S>)> {
    let (header, mut pos) = decode_header(bytes)?;
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {} but {} was requested", header.dtype, S::DTYPE)));
    }
    let mut params = ParamSet::new();
    for t in &header.tensors {
        let count: usize = t.shape.iter().product();
        let end = pos + count * S::BYTES;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("tensor {} truncated", t.name)));
        }
        let value = bytes[pos..end].chunks_exact(S::BYTES).map(S::read_le).collect();
        params.add(t.name.clone(), &t.shape, value);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((header, params))
}

/// Writes through a sibling temp file so readers never see a partial file.
pub fn save_checkpoint<S: Scalar>(path: &Path, kind: &str, meta: serde_json::Value, params: &ParamSet<S>) -> Result<()> {
    let bytes = encode_checkpoint(kind, meta, params)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(CheckpointHeader, ParamSet<S>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
