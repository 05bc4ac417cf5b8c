//! Checkpoint container.
//!
//! Layout: 8-byte magic `CTPSEGCK`, little-endian `u32` format version,
//! `u64` length-prefixed UTF-8 JSON header (config, parameter manifest
//! with name/shape/offset, epoch, best validation DSC, optional optimizer
//! scalars), raw little-endian `f32` parameter blobs in manifest order,
//! and a trailing CRC32 of all prior bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Element;
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::Model;

pub const MAGIC: &[u8; 8] = b"CTPSEGCK";
pub const VERSION: u32 = 1;

/// Optimizer scalars worth carrying across restarts; gradient accumulators
/// start fresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

/// Bookkeeping stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_val_dsc: f64,
    #[serde(default)]
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: String,
    config: ModelConfig,
    params: Vec<ManifestEntry>,
    epoch: usize,
    best_val_dsc: f64,
    optimizer: Option<OptimizerMeta>,
}

/// Serialize a model plus metadata to `path`.
pub fn save_checkpoint<E: Element>(
    model: &Model<E>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let entries = model.state_entries();

    let mut manifest = Vec::with_capacity(entries.len());
    let mut offset = 0u64;
    for (name, tensor) in &entries {
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += 4 * tensor.len() as u64;
    }
    let header = Header {
        architecture: model.arch_tag().to_string(),
        config: model.config(),
        params: manifest,
        epoch: meta.epoch,
        best_val_dsc: meta.best_val_dsc,
        optimizer: meta.optimizer.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(24 + header_json.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, tensor) in &entries {
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes);
    bytes.extend_from_slice(&hasher.finalize().to_le_bytes());

    fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

/// Deserialize a model (any element type; blobs are stored as `f32`).
pub fn load_checkpoint<E: Element>(path: impl AsRef<Path>) -> Result<(Model<E>, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(Error::CorruptFile(format!("{}: file too short", path.display())));
    }

    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if hasher.finalize() != stored {
        return Err(Error::CorruptFile(format!("{}: checksum mismatch", path.display())));
    }

    if &body[..8] != MAGIC {
        return Err(Error::CorruptFile(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len());
    let header_end = header_end.ok_or_else(|| {
        Error::CorruptFile(format!("{}: header length out of bounds", path.display()))
    })?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;
    let blobs = &body[header_end..];

    let mut model = Model::<E>::build(&header.config, 0)?;
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    {
        let fill = |name: &str, target: &mut crate::autodiff::Tensor<E>| -> Result<()> {
            let entry = header
                .params
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| {
                    Error::IncompatibleCheckpoint(format!("missing parameter {name}"))
                })?;
            if entry.shape != target.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name}: checkpoint shape {:?} vs model {:?}",
                    entry.shape,
                    target.shape()
                )));
            }
            let n = target.len();
            let start = entry.offset as usize;
            let end = start + 4 * n;
            if end > blobs.len() {
                return Err(Error::CorruptFile(format!(
                    "{name}: blob range {start}..{end} beyond payload"
                )));
            }
            for (i, chunk) in blobs[start..end].chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                target.data_mut()[i] = E::from_f32(v);
            }
            Ok(())
        };

        for p in model.params_mut() {
            expected.push((p.name.clone(), p.value.shape().to_vec()));
            let name = p.name.clone();
            fill(&name, &mut p.value)?;
        }
        for (name, buf) in model.buffers_mut() {
            expected.push((name.clone(), buf.shape().to_vec()));
            fill(&name, buf)?;
        }
    }
    if expected.len() != header.params.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint has {} entries, model has {}",
            header.params.len(),
            expected.len()
        )));
    }

    let meta = CheckpointMeta {
        epoch: header.epoch,
        best_val_dsc: header.best_val_dsc,
        optimizer: header.optimizer,
    };
    Ok((model, meta))
}

/// Load and require a specific architecture tag.
pub fn load_checkpoint_expecting<E: Element>(
    path: impl AsRef<Path>,
    arch_tag: &str,
) -> Result<(Model<E>, CheckpointMeta)> {
    let (model, meta) = load_checkpoint::<E>(path.as_ref())?;
    if model.arch_tag() != arch_tag {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint holds a {} model, expected {}",
            model.arch_tag(),
            arch_tag
        )));
    }
    Ok((model, meta))
}
