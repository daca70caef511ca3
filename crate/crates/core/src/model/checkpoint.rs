//! Binary checkpoint container.
//!
//! Layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `SMTCKPT\0` |
//! | 4 | format version, `u32` little-endian |
//! | 8 | header length `h`, `u64` little-endian |
//! | h | UTF-8 JSON header |
//! | rest | every tensor as little-endian `f64`, in header order |
//!
//! Tensor order is the order of [`ModelParams::named_tensors`]: patch
//! embedding, coordinate encoding, class token, then per block norm1, Q, K,
//! V, O, norm2, fc1, fc2, then the final norm and the head.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Result, SmtError};

pub const MAGIC: &[u8; 8] = b"SMTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub step: u64,
    /// Free-form run metadata such as saliency and selection settings.
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, seed: u64, step: u64, extra: serde_json::Value, params: ModelParams) -> Self {
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|t| TensorEntry {
                name: t.name,
                shape: t.tensor.shape.clone(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                model,
                seed,
                step,
                extra,
                tensors,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| SmtError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + self.params.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.named_tensors() {
            for v in &t.tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let cfg = header.model;
        cfg.validate()?;
        let mut params = ModelParams::zeros(&cfg);
        let expected: Vec<TensorEntry> = params
            .named_tensors()
            .into_iter()
            .map(|t| TensorEntry {
                name: t.name,
                shape: t.tensor.shape.clone(),
            })
            .collect();
        if expected != header.tensors {
            return Err(SmtError::Format(
                "tensor table does not match the model configuration".into(),
            ));
        }
        let start = body_offset(bytes)?;
        let body = &bytes[start..];
        let needed = params.num_scalars() * 8;
        if body.len() != needed {
            return Err(SmtError::Format(format!(
                "tensor payload is {} bytes, expected {needed}",
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for t in params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = values.next().expect("payload length checked");
            }
        }
        if !params.all_finite() {
            return Err(SmtError::Format("checkpoint contains non-finite values".into()));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| SmtError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| SmtError::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| SmtError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SmtError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn body_offset(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(SmtError::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(SmtError::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() - 20 < len {
        return Err(SmtError::Format("truncated checkpoint header".into()));
    }
    Ok(20 + len)
}

fn parse_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let end = body_offset(bytes)?;
    serde_json::from_slice(&bytes[20..end]).map_err(|e| SmtError::Format(format!("checkpoint header: {e}")))
}

/// Reads only the JSON header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| SmtError::io(path, e))?;
    parse_header(&bytes)
}
