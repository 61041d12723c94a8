//! MNIST IDX ingestion, pixel normalization, row-major flattening, and
//! pre-computation of input spectra.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::spectral::{FftPlan, C64};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got} (expected {expected})")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },
    #[error("{path}: truncated at byte {offset} (needed {needed} more)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{path}: {got} trailing bytes after the declared payload")]
    TrailingBytes { path: PathBuf, got: usize },
    #[error("{path}: unsupported dimension layout {dims:?}")]
    BadDimensions { path: PathBuf, dims: Vec<u32> },
    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at example {index} outside 0-9")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u8,
    },
}

/// One training or test example: the precomputed input spectrum, its label,
/// and optionally the raw pixels it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub spectrum: Vec<C64>,
    pub label: u8,
    pub spatial: Option<Vec<f64>>,
}

struct IdxFile {
    dims: Vec<u32>,
    payload: Vec<u8>,
}

fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxFile, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let need = |offset: usize, needed: usize| -> Result<(), DataError> {
        if bytes.len() < offset + needed {
            Err(DataError::Truncated {
                path: path.to_path_buf(),
                offset: bytes.len(),
                needed: offset + needed - bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic,
            got: magic,
        });
    }
    // The low byte of the magic is the dimension count in the IDX format;
    // 2049/2051 encode 1 and 3 dimensions respectively.
    let dim_count = (magic & 0xff) as usize & 0x0f;
    need(4, dim_count * 4)?;
    let dims: Vec<u32> = (0..dim_count)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")))
        .collect();
    let header = 4 + 4 * dim_count;
    let expected_payload: usize = dims.iter().map(|&d| d as usize).product();
    need(header, expected_payload)?;
    let trailing = bytes.len() - header - expected_payload;
    if trailing > 0 {
        return Err(DataError::TrailingBytes {
            path: path.to_path_buf(),
            got: trailing,
        });
    }
    Ok(IdxFile {
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Reads an IDX image file: pixels scaled by 1/255 into [0,1] and flattened
/// row-major, one vector per image.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let file = read_idx(path, IMAGE_MAGIC)?;
    let [count, rows, cols] = file.dims[..] else {
        return Err(DataError::BadDimensions {
            path: path.to_path_buf(),
            dims: file.dims,
        });
    };
    let size = rows as usize * cols as usize;
    Ok(file
        .payload
        .chunks_exact(size)
        .take(count as usize)
        .map(|chunk| chunk.iter().map(|&b| b as f64 / 255.0).collect())
        .collect())
}

/// Reads an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let file = read_idx(path, LABEL_MAGIC)?;
    let [_count] = file.dims[..] else {
        return Err(DataError::BadDimensions {
            path: path.to_path_buf(),
            dims: file.dims,
        });
    };
    Ok(file.payload)
}

/// Loads an image/label file pair into (pixels, label) examples, checking
/// that the two files agree on the example count and that labels are digits.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
) -> Result<Vec<(Vec<f64>, u8)>, DataError> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    for (index, &label) in labels.iter().enumerate() {
        if label > 9 {
            return Err(DataError::LabelOutOfRange {
                path: labels_path.to_path_buf(),
                index,
                label,
            });
        }
    }
    Ok(images.into_iter().zip(labels).collect())
}

/// Transforms every example once up front, so training touches only
/// frequency-domain data afterwards.
pub fn precompute_spectra(examples: &[(Vec<f64>, u8)], keep_spatial: bool) -> Vec<LabeledExample> {
    let Some(first) = examples.first() else {
        return Vec::new();
    };
    let plan = FftPlan::new(first.0.len());
    examples
        .par_iter()
        .map(|(pixels, label)| {
            let complex: Vec<C64> = pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect();
            let spectrum = plan.transform(&complex);
            LabeledExample {
                spectrum,
                label: *label,
                spatial: keep_spatial.then(|| pixels.clone()),
            }
        })
        .collect()
}

/// Deterministic epoch batching: a permutation derived from (seed, epoch)
/// split into `batch_size` groups, final short batch included.
pub fn batch_iter(
    count: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Streams keep epochs independent without reseeding arithmetic; stream 0
    // stays reserved for parameter initialization.
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
