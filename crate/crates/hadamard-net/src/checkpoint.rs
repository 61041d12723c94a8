//! Binary checkpoint persistence.
//!
//! Layout: the magic bytes "HDNW", a 4-byte little-endian format version
//! (currently 1), an 8-byte little-endian length prefix followed by the
//! JSON-serialized header (network spec plus training metadata), then every
//! parameter tensor in canonical order as raw little-endian f64 pairs
//! (re, im). Loading a checkpoint reproduces the parameters bit for bit.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::network::{NetworkError, NetworkSpec, ParameterSet};
use num_complex::Complex64;

pub const MAGIC: [u8; 4] = *b"HDNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes {got:?}")]
    BadMagic { path: PathBuf, got: [u8; 4] },
    #[error("{path}: unsupported format version {got} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion { path: PathBuf, got: u32 },
    #[error("{path}: truncated at byte {offset}")]
    Truncated { path: PathBuf, offset: usize },
    #[error("{path}: {got} trailing bytes after parameter data")]
    TrailingBytes { path: PathBuf, got: usize },
    #[error("{path}: corrupt header: {source}")]
    CorruptHeader {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Metrics snapshot stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub meta: TrainingMeta,
    pub params: ParameterSet,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: TrainingMeta,
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let header = serde_json::to_vec(&Header {
        spec: checkpoint.spec.clone(),
        meta: checkpoint.meta,
    })
    .expect("spec serialization cannot fail");
    let mut bytes = Vec::with_capacity(
        16 + header.len() + checkpoint.params.param_count() * 16,
    );
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    checkpoint.params.visit_tensors(|tensor| {
        for v in tensor {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
    });
    std::fs::write(path, &bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let truncated = |offset: usize| CheckpointError::Truncated {
        path: path.to_path_buf(),
        offset,
    };
    if bytes.len() < 16 {
        return Err(truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.to_path_buf(),
            got: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: path.to_path_buf(),
            got: version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + header_len {
        return Err(truncated(bytes.len()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len]).map_err(
        |source| CheckpointError::CorruptHeader {
            path: path.to_path_buf(),
            source,
        },
    )?;

    let mut params = ParameterSet::zeros_for(&header.spec)?;
    let expected_bytes = params.param_count() * 16;
    let data = &bytes[16 + header_len..];
    if data.len() < expected_bytes {
        return Err(truncated(bytes.len()));
    }
    if data.len() > expected_bytes {
        return Err(CheckpointError::TrailingBytes {
            path: path.to_path_buf(),
            got: data.len() - expected_bytes,
        });
    }
    let mut cursor = 0;
    params.visit_tensors_mut(|tensor| {
        for v in tensor.iter_mut() {
            let re = f64::from_le_bytes(data[cursor..cursor + 8].try_into().expect("8 bytes"));
            let im =
                f64::from_le_bytes(data[cursor + 8..cursor + 16].try_into().expect("8 bytes"));
            *v = Complex64::new(re, im);
            cursor += 16;
        }
    });
    debug_assert_eq!(cursor, expected_bytes);
    Ok(Checkpoint {
        spec: header.spec,
        meta: header.meta,
        params,
    })
}
