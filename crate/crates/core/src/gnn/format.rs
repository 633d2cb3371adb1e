//! Portable weight file.
//!
//! ```text
//! bytes 0..8      little-endian u64 L, length of the manifest
//! bytes 8..8+L    UTF-8 JSON manifest
//! bytes 8+L..     little-endian f32 blob, row-major tensors
//! ```
//!
//! The manifest is `{version, arch: {M, N, D, Z, widths}, norm: {mean, scale},
//! tensors: [{name, shape, byte_offset}]}` with offsets relative to the blob start.
//! Tensors must be packed back to back in manifest order and fill the blob exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Arch, FeatureNorm, GnnModel, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    arch: Arch,
    norm: FeatureNorm,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

pub fn write_model<W: Write>(mut out: W, model: &GnnModel) -> Result<()> {
    let mut offset = 0u64;
    let tensors = model
        .tensors()
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                byte_offset: offset,
            };
            offset += 4 * t.data.len() as u64;
            e
        })
        .collect();
    let manifest = Manifest {
        version: FORMAT_VERSION,
        arch: *model.arch(),
        norm: model.norm().clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in model.tensors() {
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn read_model<R: Read>(mut input: R) -> Result<GnnModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(format_err("file shorter than its length prefix"));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let end = 8u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| format_err(format!("manifest length {len} exceeds file size")))? as usize;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[8..end]).map_err(|e| format_err(format!("manifest is not valid JSON: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {}", manifest.version)));
    }
    let blob = &bytes[end..];
    let mut cursor = 0u64;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        if e.byte_offset != cursor {
            return Err(format_err(format!(
                "tensor {} at byte offset {}, expected {cursor}",
                e.name, e.byte_offset
            )));
        }
        let count: usize = e.shape.iter().product();
        let size = 4 * count as u64;
        let stop = cursor + size;
        if stop > blob.len() as u64 {
            return Err(format_err(format!("tensor {} runs past the end of the blob", e.name)));
        }
        let data = blob[cursor as usize..stop as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor {
            name: e.name,
            shape: e.shape,
            data,
        });
        cursor = stop;
    }
    if cursor != blob.len() as u64 {
        return Err(format_err(format!(
            "blob holds {} bytes, tensors cover {cursor}",
            blob.len()
        )));
    }
    GnnModel::from_tensors(manifest.arch, manifest.norm, tensors)
}

impl GnnModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_model(&mut out, self).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_model(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        write_model(std::io::BufWriter::new(f), self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        read_model(std::io::BufReader::new(f))
    }
}
