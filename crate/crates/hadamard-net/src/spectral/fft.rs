//! Discrete Fourier transform, forward unnormalized and inverse carrying 1/N.
//!
//! The fast path is a recursive mixed-radix Cooley-Tukey decomposition over
//! the factors {2, 3, 5, 7}, which covers N = 784 = 2^4 * 7^2 and the usual
//! test sizes. Any length with a factor outside that set drops to a direct
//! O(N^2) summation over the same twiddle table.

use num_complex::Complex64;
use std::f64::consts::TAU;

use super::{ensure_finite, SpectralError};

pub(crate) const RADICES: [usize; 4] = [2, 3, 5, 7];

/// A transform plan for a fixed length: the twiddle table `w^t = exp(-2*pi*i*t/N)`
/// is built once and shared by every call, which matters when one parameter
/// update runs dozens of transforms of the same length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    table: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        let table = (0..n)
            .map(|t| {
                let (sin, cos) = (-TAU * t as f64 / n as f64).sin_cos();
                Complex64::new(cos, sin)
            })
            .collect();
        FftPlan { n, table }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform: `X_k = sum_j x_j w^{jk}`, unnormalized.
    pub fn dft(&self, x: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
        self.check(x)?;
        Ok(self.transform(x))
    }

    /// Inverse transform, carrying the 1/N factor.
    pub fn idft(&self, x: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
        self.check(x)?;
        Ok(self.inverse(x))
    }

    fn check(&self, x: &[Complex64]) -> Result<(), SpectralError> {
        if x.len() != self.n {
            return Err(SpectralError::LengthMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if self.n == 0 {
            return Err(SpectralError::EmptyInput);
        }
        ensure_finite(x)
    }

    /// Forward transform without the finiteness check; for internal use where
    /// inputs were already validated.
    pub(crate) fn transform(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.n);
        let mut out = vec![Complex64::ZERO; self.n];
        let mut scratch = vec![Complex64::ZERO; self.n];
        self.rec(x, 0, 1, &mut out, &mut scratch, 1);
        out
    }

    /// Inverse via conjugation: `idft(X) = conj(dft(conj(X))) / N`.
    pub(crate) fn inverse(&self, x: &[Complex64]) -> Vec<Complex64> {
        let conjugated: Vec<Complex64> = x.iter().map(|c| c.conj()).collect();
        let mut out = self.transform(&conjugated);
        let scale = 1.0 / self.n as f64;
        for v in &mut out {
            *v = v.conj() * scale;
        }
        out
    }

    /// Recursive decimation-in-time step on the strided view
    /// `x[offset], x[offset+stride], ...` of length `dst.len()`.
    /// `mult` scales twiddle indices into the shared length-N table.
    fn rec(
        &self,
        x: &[Complex64],
        offset: usize,
        stride: usize,
        dst: &mut [Complex64],
        scratch: &mut [Complex64],
        mult: usize,
    ) {
        let n = dst.len();
        if n == 1 {
            dst[0] = x[offset];
            return;
        }
        let Some(radix) = RADICES.iter().copied().find(|p| n.is_multiple_of(*p)) else {
            self.direct_strided(x, offset, stride, dst, mult);
            return;
        };
        if n == radix {
            self.direct_strided(x, offset, stride, dst, mult);
            return;
        }
        let m = n / radix;
        for r in 0..radix {
            let (d, s) = (&mut scratch[r * m..(r + 1) * m], &mut dst[r * m..(r + 1) * m]);
            self.rec(x, offset + r * stride, stride * radix, d, s, mult * radix);
        }
        // X[k] = sum_r w_n^{rk} * sub_r[k mod m]
        for s in 0..radix {
            for q in 0..m {
                let k = q + s * m;
                let mut acc = scratch[q];
                for r in 1..radix {
                    let tw = self.table[(r * k) % n * mult];
                    acc += tw * scratch[r * m + q];
                }
                dst[k] = acc;
            }
        }
    }

    /// Direct summation fallback for lengths with no small factor (and for
    /// the radix-sized leaves of the recursion).
    fn direct_strided(
        &self,
        x: &[Complex64],
        offset: usize,
        stride: usize,
        dst: &mut [Complex64],
        mult: usize,
    ) {
        let n = dst.len();
        for (k, out) in dst.iter_mut().enumerate() {
            let mut acc = Complex64::ZERO;
            for j in 0..n {
                acc += x[offset + j * stride] * self.table[(j * k) % n * mult];
            }
            *out = acc;
        }
    }
}

/// One-shot forward DFT. Builds a plan internally; use [`FftPlan`] directly
/// when transforming many vectors of the same length.
pub fn dft(x: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
    FftPlan::new(x.len()).dft(x)
}

/// One-shot inverse DFT.
pub fn idft(x: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
    FftPlan::new(x.len()).idft(x)
}
