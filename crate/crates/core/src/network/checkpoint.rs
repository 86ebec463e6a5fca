//! Binary parameter container.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
//! every tensor as little-endian f64 in row-major order. The header carries
//! the format tag `diadem-v1`, the model config, the demographic schema and
//! its hash, each tensor's name, shape and byte offset into the payload, and
//! a SHA-256 of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelParams};
use crate::dataset::DemographicSchema;

pub const FORMAT_TAG: &str = "diadem-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    model_config: ModelConfig,
    schema: DemographicSchema,
    schema_hash: String,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
    payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub schema: DemographicSchema,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.params.num_parameters() * 8);
        let mut tensors = Vec::new();
        for t in self.params.tensors() {
            tensors.push(TensorEntry {
                name: t.label(),
                rows: t.rows,
                cols: t.cols,
                offset: payload.len(),
            });
            for v in t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT_TAG.into(),
            model_config: self.model_config.clone(),
            schema: self.schema.clone(),
            schema_hash: self.schema.hash(),
            tensors,
            payload_bytes: payload.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |msg: &str| CheckpointError::Corrupt(msg.to_string());
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| corrupt("truncated header length"))?;
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
            .map_err(|_| corrupt("header length overflow"))?;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(CheckpointError::Corrupt(format!(
                "unsupported format `{}`",
                header.format
            )));
        }
        let payload = &bytes[header_end..];
        if payload.len() != header.payload_bytes {
            return Err(corrupt("payload length mismatch"));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }
        if header.schema.hash() != header.schema_hash {
            return Err(corrupt("schema hash mismatch"));
        }
        header
            .model_config
            .validate()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if header.schema.axis_sizes() != header.model_config.axis_sizes {
            return Err(corrupt("schema disagrees with model config"));
        }

        let mut params = ModelParams::zeros(&header.model_config);
        let targets = params.tensors_mut();
        if targets.len() != header.tensors.len() {
            return Err(corrupt("tensor count mismatch"));
        }
        for (target, entry) in targets.into_iter().zip(&header.tensors) {
            let expected_name = if target.name == "w_demo" {
                format!("w_demo[{}]", target.index)
            } else {
                target.name.to_string()
            };
            if entry.name != expected_name || entry.rows * entry.cols != target.data.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor `{}` does not match expected `{expected_name}`",
                    entry.name
                )));
            }
            let end = entry.offset + target.data.len() * 8;
            let raw = payload
                .get(entry.offset..end)
                .ok_or_else(|| corrupt("tensor offset out of range"))?;
            for (v, chunk) in target.data.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        if !params.all_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Self {
            model_config: header.model_config,
            schema: header.schema,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
