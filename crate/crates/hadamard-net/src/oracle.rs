//! Slow, independent reference implementations used only by tests and the
//! verify command. Nothing here shares twiddle tables or transform code with
//! the fast path; agreement between the two is evidence, not tautology.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::layers::{self, HadamardBias};
use crate::network::{LayerParams, LayerSpec, NetworkSpec, ParameterSet};
use crate::spectral::{KernelPattern, SpectralError, C64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("layer {index} ({kind}) has no space-domain twin")]
    NonCommutingLayer { index: usize, kind: &'static str },
    #[error("parameter set does not match network spec at layer {index}")]
    ParamMismatch { index: usize },
}

/// Literal evaluation of the transform definition, O(N^2), with every
/// `w^{jk}` term computed from scratch.
pub fn naive_dft(x: &[C64]) -> Vec<C64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::ZERO;
            for (j, &v) in x.iter().enumerate() {
                let angle = -TAU * ((j * k) % n) as f64 / n as f64;
                acc += v * Complex64::new(angle.cos(), angle.sin());
            }
            acc
        })
        .collect()
}

/// Direct O(N^2) circular convolution `(x * y)_k = sum_j x_j y_{(k-j) mod N}`.
pub fn naive_convolve(x: &[C64], y: &[C64]) -> Result<Vec<C64>, SpectralError> {
    let n = x.len();
    if y.len() != n {
        return Err(SpectralError::LengthMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let mut out = vec![Complex64::ZERO; n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::ZERO;
        for (j, &xv) in x.iter().enumerate() {
            acc += xv * y[(n + k - j) % n];
        }
        *o = acc;
    }
    Ok(out)
}

/// Direct-summation transforms for the twin's internal use. A per-call table
/// of `w^t` keeps the twin affordable at N = 784 without touching the fast
/// path's plan machinery.
struct DirectTransform {
    n: usize,
    table: Vec<C64>,
}

impl DirectTransform {
    fn new(n: usize) -> Self {
        let table = (0..n)
            .map(|t| {
                let angle = -TAU * t as f64 / n as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        DirectTransform { n, table }
    }

    fn inverse(&self, x: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut acc = Complex64::ZERO;
                for (j, &v) in x.iter().enumerate() {
                    // w^{-jk} = conj(w^{jk})
                    acc += v * self.table[(j * k) % n].conj();
                }
                acc / n as f64
            })
            .collect()
    }
}

fn twin_pad(w: &[C64], pattern: &KernelPattern, n: usize) -> Vec<C64> {
    let mut out = vec![Complex64::ZERO; n];
    for (i, &j) in pattern.indices().iter().enumerate() {
        out[j] = w[i];
    }
    out
}

/// Evaluates the equivalent space-domain pipeline of a frequency-domain
/// network and returns output probabilities. Convolutions are direct sums,
/// activations and dot products are written out longhand, and frequency
/// parameters are mapped to spatial ones by direct inverse transforms.
pub fn space_domain_twin_forward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    spatial_input: &[C64],
) -> Result<Vec<f64>, OracleError> {
    let n = spec.input_len;
    let transform = DirectTransform::new(n);
    // Channel-major working tensor in the space domain.
    let mut channels: Vec<Vec<C64>> = (0..spec.input_channels)
        .map(|i| spatial_input[i * n..(i + 1) * n].to_vec())
        .collect();
    let mut fc_output: Option<Vec<C64>> = None;

    for (index, (layer, layer_params)) in spec.layers.iter().zip(params.layers()).enumerate() {
        match (layer, layer_params) {
            (LayerSpec::Hadamard { pattern, out_channels, .. }, LayerParams::Hadamard(p)) => {
                let k = pattern.len();
                let in_ch = channels.len();
                let mut next = Vec::with_capacity(*out_channels);
                for j in 0..*out_channels {
                    let mut acc = vec![Complex64::ZERO; n];
                    for (i, ch) in channels.iter().enumerate() {
                        let taps = &p.weights()[(j * in_ch + i) * k..(j * in_ch + i + 1) * k];
                        let filter = twin_pad(taps, pattern, n);
                        let conv = naive_convolve(ch, &filter)?;
                        for (a, b) in acc.iter_mut().zip(&conv) {
                            *a += b;
                        }
                    }
                    match p.bias() {
                        HadamardBias::None => {}
                        // A scalar bias is a constant vector in the space domain.
                        HadamardBias::ScalarPerChannel(b) => {
                            for a in acc.iter_mut() {
                                *a += b[j];
                            }
                        }
                        // Full bias vectors are stored in the frequency domain.
                        HadamardBias::FullVector(b) => {
                            let spatial_bias = transform.inverse(&b[j * n..(j + 1) * n]);
                            for (a, sb) in acc.iter_mut().zip(&spatial_bias) {
                                *a += sb;
                            }
                        }
                    }
                    next.push(acc);
                }
                channels = next;
            }
            (LayerSpec::Activation(cfg), LayerParams::Stateless) => {
                for ch in channels.iter_mut() {
                    let norm = ch.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    if norm <= cfg.zero_threshold {
                        ch.iter_mut().for_each(|c| *c = Complex64::ZERO);
                        continue;
                    }
                    let root_n = (n as f64).sqrt();
                    let scale = match cfg.kind {
                        layers::ActivationKind::UnitNorm => 1.0 / (root_n * norm),
                        layers::ActivationKind::Georgiou { c, r } => 1.0 / (c + root_n / r * norm),
                    };
                    ch.iter_mut().for_each(|c| *c *= scale);
                }
            }
            (LayerSpec::Residual, LayerParams::Residual(p)) => {
                let w1 = transform.inverse(p.w1());
                let w2 = transform.inverse(p.w2());
                for ch in channels.iter_mut() {
                    let inner = naive_convolve(ch, &w1)?;
                    let norm = inner.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    let scale = if norm == 0.0 {
                        0.0
                    } else {
                        1.0 / ((n as f64).sqrt() * norm)
                    };
                    let activated: Vec<C64> = inner.iter().map(|c| c * scale).collect();
                    let outer = naive_convolve(&activated, &w2)?;
                    for (a, b) in ch.iter_mut().zip(&outer) {
                        *a += b;
                    }
                }
            }
            (LayerSpec::Fc { outputs, bias }, LayerParams::Fc(p)) => {
                let m = channels.len();
                let mut out = Vec::with_capacity(*outputs);
                for f in 0..*outputs {
                    let mut acc = Complex64::ZERO;
                    for (i, ch) in channels.iter().enumerate() {
                        let freq_w = &p.weights()[(f * m + i) * n..(f * m + i + 1) * n];
                        let spatial_w = transform.inverse(freq_w);
                        for (x, w) in ch.iter().zip(&spatial_w) {
                            acc += x * w.conj();
                        }
                    }
                    if *bias {
                        acc += p.biases().expect("bias flagged but absent")[f];
                    }
                    out.push(acc);
                }
                fc_output = Some(out);
            }
            (LayerSpec::Output, LayerParams::Stateless) => {
                let z = fc_output
                    .take()
                    .unwrap_or_else(|| channels.concat());
                let total: f64 = z.iter().map(|c| c.norm_sqr()).sum();
                if total <= 1e-24 {
                    return Ok(vec![1.0 / z.len() as f64; z.len()]);
                }
                return Ok(z.iter().map(|c| c.norm_sqr() / total).collect());
            }
            (LayerSpec::Divider, _) => {
                return Err(OracleError::NonCommutingLayer {
                    index,
                    kind: "divider",
                })
            }
            _ => return Err(OracleError::ParamMismatch { index }),
        }
    }
    Err(OracleError::NonCommutingLayer {
        index: spec.layers.len(),
        kind: "missing output",
    })
}
