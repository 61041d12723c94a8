//! Complex vector and tensor arithmetic: the DFT, circular convolution,
//! kernel padding, inner products and norms that every layer builds on.
//!
//! Conventions are pinned once here: the forward transform is unnormalized,
//! the inverse carries 1/N, and Parseval therefore reads
//! `<x, w> = (1/N) <F(x), F(w)>`.

mod fft;

pub use fft::{dft, idft, FftPlan};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 64-bit complex scalar used throughout the crate.
pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("non-finite component at index {index}: {value}")]
    NonFinite { index: usize, value: C64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("kernel index {index} out of range for length {len}")]
    KernelIndexOutOfRange { index: usize, len: usize },
    #[error("kernel indices must be strictly increasing (at position {position})")]
    KernelNotIncreasing { position: usize },
    #[error("tensor data has {got} entries, expected {channels} x {len}")]
    BadTensorShape { channels: usize, len: usize, got: usize },
    #[error("expected {expected:?} domain, got {got:?}")]
    WrongDomain { expected: Domain, got: Domain },
}

pub(crate) fn ensure_finite(data: &[C64]) -> Result<(), SpectralError> {
    for (index, &value) in data.iter().enumerate() {
        if !value.re.is_finite() || !value.im.is_finite() {
            return Err(SpectralError::NonFinite { index, value });
        }
    }
    Ok(())
}

/// Whether a tensor holds raw signal values or their DFT coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Spatial,
    Frequency,
}

/// A p-channel complex tensor of channel length N, tagged with the domain it
/// lives in. Channel data is stored contiguously, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor {
    channels: usize,
    len: usize,
    domain: Domain,
    data: Vec<C64>,
}

impl SpectralTensor {
    pub fn new(
        channels: usize,
        len: usize,
        domain: Domain,
        data: Vec<C64>,
    ) -> Result<Self, SpectralError> {
        if channels == 0 || len == 0 || data.len() != channels * len {
            return Err(SpectralError::BadTensorShape {
                channels,
                len,
                got: data.len(),
            });
        }
        ensure_finite(&data)?;
        Ok(SpectralTensor {
            channels,
            len,
            domain,
            data,
        })
    }

    pub fn zeros(channels: usize, len: usize, domain: Domain) -> Self {
        SpectralTensor {
            channels,
            len,
            domain,
            data: vec![C64::ZERO; channels * len],
        }
    }

    /// Single-channel tensor from a complex vector.
    pub fn from_vec(data: Vec<C64>, domain: Domain) -> Result<Self, SpectralError> {
        let len = data.len();
        Self::new(1, len, domain, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn channel(&self, i: usize) -> &[C64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.len..(i + 1) * self.len]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub(crate) fn expect_domain(&self, expected: Domain) -> Result<(), SpectralError> {
        if self.domain != expected {
            return Err(SpectralError::WrongDomain {
                expected,
                got: self.domain,
            });
        }
        Ok(())
    }

    /// Channel-wise forward DFT; flips the domain tag Spatial -> Frequency.
    pub fn to_frequency(&self) -> Result<SpectralTensor, SpectralError> {
        self.expect_domain(Domain::Spatial)?;
        self.transformed(Domain::Frequency, false)
    }

    /// Channel-wise inverse DFT; flips the domain tag Frequency -> Spatial.
    pub fn to_spatial(&self) -> Result<SpectralTensor, SpectralError> {
        self.expect_domain(Domain::Frequency)?;
        self.transformed(Domain::Spatial, true)
    }

    fn transformed(&self, domain: Domain, inverse: bool) -> Result<SpectralTensor, SpectralError> {
        let plan = FftPlan::new(self.len);
        let mut out = SpectralTensor::zeros(self.channels, self.len, domain);
        for i in 0..self.channels {
            let t = if inverse {
                plan.idft(self.channel(i))?
            } else {
                plan.dft(self.channel(i))?
            };
            out.channel_mut(i).copy_from_slice(&t);
        }
        Ok(out)
    }
}

/// Ordered index set K mapping a small kernel onto a length-N circular filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelPattern {
    indices: Vec<usize>,
    target_len: usize,
}

impl KernelPattern {
    pub fn new(indices: Vec<usize>, target_len: usize) -> Result<Self, SpectralError> {
        if indices.is_empty() {
            return Err(SpectralError::EmptyInput);
        }
        for (position, pair) in indices.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(SpectralError::KernelNotIncreasing { position: position + 1 });
            }
        }
        if let Some(&max) = indices.last() {
            if max >= target_len {
                return Err(SpectralError::KernelIndexOutOfRange {
                    index: max,
                    len: target_len,
                });
            }
        }
        Ok(KernelPattern {
            indices,
            target_len,
        })
    }

    /// A rows x cols kernel laid onto a row-major image of width `row_stride`:
    /// index (r, c) maps to r * row_stride + c.
    pub fn grid(
        rows: usize,
        cols: usize,
        row_stride: usize,
        target_len: usize,
    ) -> Result<Self, SpectralError> {
        let mut indices = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                indices.push(r * row_stride + c);
            }
        }
        Self::new(indices, target_len)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }
}

/// Circular convolution `(x * y)_k = sum_j x_j y_{(k-j) mod N}`, computed
/// through the transform pair so it stays O(N log N) for smooth lengths.
pub fn circular_convolve(x: &[C64], y: &[C64]) -> Result<Vec<C64>, SpectralError> {
    if x.len() != y.len() {
        return Err(SpectralError::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let plan = FftPlan::new(x.len());
    let xs = plan.dft(x)?;
    let ys = plan.dft(y)?;
    let prod: Vec<C64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    plan.idft(&prod)
}

/// Zero-pad kernel taps onto a length-N multichannel filter:
/// `out[l][K[i]] = w[l][i]`, everything else zero. `w` is channel-major with
/// `channels` rows of `pattern.len()` taps.
pub fn pad_kernel(
    w: &[C64],
    pattern: &KernelPattern,
    channels: usize,
    n: usize,
) -> Result<Vec<C64>, SpectralError> {
    let k = pattern.len();
    if w.len() != channels * k {
        return Err(SpectralError::LengthMismatch {
            expected: channels * k,
            got: w.len(),
        });
    }
    if pattern.target_len() != n {
        return Err(SpectralError::LengthMismatch {
            expected: n,
            got: pattern.target_len(),
        });
    }
    if let Some(&max) = pattern.indices().last() {
        if max >= n {
            return Err(SpectralError::KernelIndexOutOfRange { index: max, len: n });
        }
    }
    let mut out = vec![C64::ZERO; channels * n];
    for l in 0..channels {
        for (i, &j) in pattern.indices().iter().enumerate() {
            out[l * n + j] = w[l * k + i];
        }
    }
    Ok(out)
}

/// Complex dot product `sum_j x_j conj(w_j)`, conjugate-linear in the second
/// argument.
pub fn inner_product(x: &[C64], w: &[C64]) -> Result<C64, SpectralError> {
    if x.len() != w.len() {
        return Err(SpectralError::LengthMismatch {
            expected: x.len(),
            got: w.len(),
        });
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b.conj()).sum())
}

/// Euclidean norm `sqrt(sum_j |x_j|^2)`.
pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}
