//! Reverse-mode differentiation over complex values with Wirtinger calculus.
//!
//! Layers are generally not holomorphic, so a single gradient is not enough:
//! every activation gradient is carried backward as the pair
//! `(dL/dz, dL/dzbar)`. For a real-valued terminal loss the two stay exact
//! conjugates of each other, which the engine asserts in debug builds. For
//! weights and biases only the conjugate gradient `dL/dwbar` is kept, since
//! steepest descent on a real loss moves along its negation.

use num_complex::Complex64;

use crate::layers::{
    ActivationConfig, BatchNormParams, FcLayerParams, HadamardBias, HadamardLayerParams,
    LayerError, PreparedHadamard,
};
use crate::spectral::{Domain, SpectralTensor, C64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WirtingerError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error("gradient shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss gradient undefined: coordinate {index} has zero amplitude under a positive label")]
    UndefinedGradient { index: usize },
    #[error("loss gradient undefined for the all-zero vector")]
    ZeroVector,
    #[error("finite-difference step {0} outside [1e-7, 1e-4]")]
    BadStep(f64),
    #[error("non-finite function evaluation during finite differencing")]
    NonFiniteEvaluation,
}

/// The pair of Wirtinger gradients `(dL/dz, dL/dzbar)` for one tensor,
/// stored channel-major like the tensor it grades.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradient {
    pub d_z: Vec<C64>,
    pub d_zbar: Vec<C64>,
}

impl DualGradient {
    pub fn new(d_z: Vec<C64>, d_zbar: Vec<C64>) -> Result<Self, WirtingerError> {
        if d_z.len() != d_zbar.len() {
            return Err(WirtingerError::ShapeMismatch {
                expected: d_z.len(),
                got: d_zbar.len(),
            });
        }
        Ok(DualGradient { d_z, d_zbar })
    }

    pub fn zeros(len: usize) -> Self {
        DualGradient {
            d_z: vec![Complex64::ZERO; len],
            d_zbar: vec![Complex64::ZERO; len],
        }
    }

    /// Dual gradient of a real-valued loss: the conjugate side is implied.
    pub fn from_conjugate_pair(d_z: Vec<C64>) -> Self {
        let d_zbar = d_z.iter().map(|c| c.conj()).collect();
        DualGradient { d_z, d_zbar }
    }

    pub fn len(&self) -> usize {
        self.d_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_z.is_empty()
    }

    /// Largest deviation of `d_zbar` from `conj(d_z)`; zero for gradients of
    /// a real-valued loss.
    pub fn conjugate_defect(&self) -> f64 {
        self.d_z
            .iter()
            .zip(&self.d_zbar)
            .map(|(a, b)| (b - a.conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// Conjugate Wirtinger gradients for one layer's parameters.
#[derive(Debug, Clone, Default)]
pub struct HadamardGrad {
    /// Same filter-major layout as the parameter tensor.
    pub d_weights: Vec<C64>,
    /// Empty for BiasMode::None, q entries for scalar bias, q*N for full.
    pub d_bias: Vec<C64>,
}

#[derive(Debug, Clone, Default)]
pub struct FcGrad {
    pub d_weights: Vec<C64>,
    pub d_bias: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct ResidualGrad {
    pub d_w1: Vec<C64>,
    pub d_w2: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrad {
    pub d_gamma: Vec<C64>,
    pub d_beta: Vec<C64>,
}

// ---------------------------------------------------------------------------
// Output / loss
// ---------------------------------------------------------------------------

/// Analytic gradient of the cross-entropy loss on squared-amplitude
/// probabilities: `dL/dz_j = zbar_j / ||z||^2 - y_j zbar_j / |z_j|^2`.
pub fn loss_backward(z: &[C64], y: &[f64]) -> Result<DualGradient, WirtingerError> {
    if z.len() != y.len() {
        return Err(WirtingerError::ShapeMismatch {
            expected: z.len(),
            got: y.len(),
        });
    }
    let total: f64 = z.iter().map(|c| c.norm_sqr()).sum();
    if total <= crate::layers::OUTPUT_ZERO_THRESHOLD * crate::layers::OUTPUT_ZERO_THRESHOLD {
        return Err(WirtingerError::ZeroVector);
    }
    let mut d_z = Vec::with_capacity(z.len());
    for (j, (&zj, &yj)) in z.iter().zip(y).enumerate() {
        let mut g = zj.conj() / total;
        if yj != 0.0 {
            let amp = zj.norm_sqr();
            if amp == 0.0 {
                return Err(WirtingerError::UndefinedGradient { index: j });
            }
            g -= zj.conj() * (yj / amp);
        }
        d_z.push(g);
    }
    Ok(DualGradient::from_conjugate_pair(d_z))
}

// ---------------------------------------------------------------------------
// Activation
// ---------------------------------------------------------------------------

/// Scale and its derivative with respect to the channel norm, for the
/// rank-structured activation Jacobian.
fn activation_scale_pair(cfg: &ActivationConfig, rho: f64, n: usize, domain: Domain) -> (f64, f64) {
    use crate::layers::ActivationKind::*;
    let root_n = (n as f64).sqrt();
    match (cfg.kind, domain) {
        (UnitNorm, Domain::Frequency) => (1.0 / rho, -1.0 / (rho * rho)),
        (UnitNorm, Domain::Spatial) => (1.0 / (root_n * rho), -1.0 / (root_n * rho * rho)),
        (Georgiou { c, r }, Domain::Frequency) => {
            let denom = c + rho / r;
            (1.0 / denom, -1.0 / (r * denom * denom))
        }
        (Georgiou { c, r }, Domain::Spatial) => {
            let denom = c + root_n * rho / r;
            (1.0 / denom, -root_n / (r * denom * denom))
        }
    }
}

/// Backward pass of the norm-scaling activations. The Jacobian per channel
/// is a diagonal plus two rank-one terms, so the contraction is O(N) per
/// channel rather than the dense O(N^2):
/// `dL/dz_k = u_k s + zbar_k (s'/(2 rho)) (sum_j u_j z_j + sum_j v_j zbar_j)`.
pub fn activation_backward(
    z: &SpectralTensor,
    upstream: &DualGradient,
    cfg: &ActivationConfig,
) -> Result<DualGradient, WirtingerError> {
    let total = z.channels() * z.len();
    if upstream.len() != total {
        return Err(WirtingerError::ShapeMismatch {
            expected: total,
            got: upstream.len(),
        });
    }
    let n = z.len();
    let mut out = DualGradient::zeros(total);
    for ch in 0..z.channels() {
        let zc = z.channel(ch);
        let base = ch * n;
        let u = &upstream.d_z[base..base + n];
        let v = &upstream.d_zbar[base..base + n];
        let rho = crate::spectral::norm(zc);
        if rho <= cfg.zero_threshold {
            continue; // constant-zero region: gradient vanishes
        }
        let (s, s_prime) = activation_scale_pair(cfg, rho, n, z.domain());
        let sum_uz: C64 = u.iter().zip(zc).map(|(a, b)| a * b).sum();
        let sum_vzbar: C64 = v.iter().zip(zc).map(|(a, b)| a * b.conj()).sum();
        let coeff = (sum_uz + sum_vzbar) * (s_prime / (2.0 * rho));
        for k in 0..n {
            out.d_z[base + k] = u[k] * s + zc[k].conj() * coeff;
            out.d_zbar[base + k] = v[k] * s + zc[k] * coeff;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hadamard layer
// ---------------------------------------------------------------------------

/// Backward pass of the Hadamard layer against precomputed filter spectra,
/// accumulating parameter gradients into `acc`. The layer is holomorphic in
/// both input and weights, so the input rules are
/// `dL/dz^i_k = sum_j W^{ij}_k u^j_k` and
/// `dL/dzbar^i_k = sum_j conj(W^{ij}_k) v^j_k`,
/// while the weight gradient samples `N * idft(v^j . conj(z^i))` at the
/// kernel indices.
pub fn hadamard_backward_into(
    op: &PreparedHadamard,
    z: &SpectralTensor,
    upstream: &DualGradient,
    acc: &mut HadamardGrad,
) -> Result<DualGradient, WirtingerError> {
    let n = op.n;
    let (p, q) = (op.in_channels, op.out_channels);
    if z.channels() != p || z.len() != n {
        return Err(WirtingerError::ShapeMismatch {
            expected: p * n,
            got: z.channels() * z.len(),
        });
    }
    if upstream.len() != q * n {
        return Err(WirtingerError::ShapeMismatch {
            expected: q * n,
            got: upstream.len(),
        });
    }
    let taps = op.pattern.len();
    if acc.d_weights.len() != q * p * taps {
        return Err(WirtingerError::ShapeMismatch {
            expected: q * p * taps,
            got: acc.d_weights.len(),
        });
    }

    let mut input = DualGradient::zeros(p * n);
    for i in 0..p {
        let dz = &mut input.d_z[i * n..(i + 1) * n];
        let dzbar = &mut input.d_zbar[i * n..(i + 1) * n];
        for j in 0..q {
            let w = op.spectrum(j, i);
            let u = &upstream.d_z[j * n..(j + 1) * n];
            let v = &upstream.d_zbar[j * n..(j + 1) * n];
            for k in 0..n {
                dz[k] += w[k] * u[k];
                dzbar[k] += w[k].conj() * v[k];
            }
        }
    }

    let mut g = vec![Complex64::ZERO; n];
    for j in 0..q {
        let v = &upstream.d_zbar[j * n..(j + 1) * n];
        for i in 0..p {
            let zc = z.channel(i);
            for k in 0..n {
                g[k] = v[k] * zc[k].conj();
            }
            let sampled = op.plan.inverse(&g);
            let base = (j * p + i) * taps;
            for (t, &idx) in op.pattern.indices().iter().enumerate() {
                acc.d_weights[base + t] += sampled[idx] * n as f64;
            }
        }
    }

    match &op.bias {
        HadamardBias::None => {}
        HadamardBias::ScalarPerChannel(_) => {
            for (j, b) in acc.d_bias.iter_mut().enumerate() {
                *b += upstream.d_zbar[j * n] * n as f64;
            }
        }
        HadamardBias::FullVector(_) => {
            for (b, v) in acc.d_bias.iter_mut().zip(&upstream.d_zbar) {
                *b += v;
            }
        }
    }
    Ok(input)
}

/// Backward pass against precomputed spectra, returning fresh gradients.
pub fn hadamard_backward_prepared(
    op: &PreparedHadamard,
    z: &SpectralTensor,
    upstream: &DualGradient,
) -> Result<(DualGradient, HadamardGrad), WirtingerError> {
    let bias_len = match &op.bias {
        HadamardBias::None => 0,
        HadamardBias::ScalarPerChannel(b) | HadamardBias::FullVector(b) => b.len(),
    };
    let mut acc = HadamardGrad {
        d_weights: vec![Complex64::ZERO; op.out_channels * op.in_channels * op.pattern.len()],
        d_bias: vec![Complex64::ZERO; bias_len],
    };
    let input = hadamard_backward_into(op, z, upstream, &mut acc)?;
    Ok((input, acc))
}

/// Backward pass of the Hadamard layer; prepares the filter spectra on the
/// fly. Use [`hadamard_backward_prepared`] when spectra are already at hand.
pub fn hadamard_backward(
    z: &SpectralTensor,
    params: &HadamardLayerParams,
    upstream: &DualGradient,
) -> Result<(DualGradient, HadamardGrad), WirtingerError> {
    let op = PreparedHadamard::new(params)?;
    hadamard_backward_prepared(&op, z, upstream)
}

// ---------------------------------------------------------------------------
// Fully connected layer
// ---------------------------------------------------------------------------

/// Backward pass of the fully connected layer, accumulating parameter
/// gradients into `acc`. The output is holomorphic in the input
/// (`d(z wbar)/dz = wbar`) and anti-holomorphic in the weights
/// (`d(z wbar)/dwbar = z`), so the input gradient weights the upstream pair
/// by the conjugated filters while the weight gradient couples `z` to the
/// upstream `dL/dy`.
pub fn fc_backward_into(
    z: &SpectralTensor,
    params: &FcLayerParams,
    upstream: &DualGradient,
    acc: &mut FcGrad,
) -> Result<DualGradient, WirtingerError> {
    let total = params.in_channels() * params.len();
    if z.channels() != params.in_channels() || z.len() != params.len() {
        return Err(WirtingerError::ShapeMismatch {
            expected: total,
            got: z.channels() * z.len(),
        });
    }
    if upstream.len() != params.outputs() {
        return Err(WirtingerError::ShapeMismatch {
            expected: params.outputs(),
            got: upstream.len(),
        });
    }
    if acc.d_weights.len() != params.outputs() * total {
        return Err(WirtingerError::ShapeMismatch {
            expected: params.outputs() * total,
            got: acc.d_weights.len(),
        });
    }
    let scale = match z.domain() {
        Domain::Frequency => 1.0 / params.len() as f64,
        Domain::Spatial => 1.0,
    };

    let mut input = DualGradient::zeros(total);
    for f in 0..params.outputs() {
        let u = upstream.d_z[f] * scale;
        let v = upstream.d_zbar[f] * scale;
        let filter = params.filter(f);
        let w_grad = &mut acc.d_weights[f * total..(f + 1) * total];
        for (idx, (&zv, &wv)) in z.data().iter().zip(filter).enumerate() {
            input.d_z[idx] += u * wv.conj();
            input.d_zbar[idx] += v * wv;
            w_grad[idx] += u * zv;
        }
    }
    if params.biases().is_some() {
        for (b, v) in acc.d_bias.iter_mut().zip(&upstream.d_zbar) {
            *b += v;
        }
    }
    Ok(input)
}

/// Backward pass of the fully connected layer, returning fresh gradients.
pub fn fc_backward(
    z: &SpectralTensor,
    params: &FcLayerParams,
    upstream: &DualGradient,
) -> Result<(DualGradient, FcGrad), WirtingerError> {
    let total = params.in_channels() * params.len();
    let mut acc = FcGrad {
        d_weights: vec![Complex64::ZERO; params.outputs() * total],
        d_bias: vec![Complex64::ZERO; params.biases().map_or(0, <[C64]>::len)],
    };
    let input = fc_backward_into(z, params, upstream, &mut acc)?;
    Ok((input, acc))
}

// ---------------------------------------------------------------------------
// Divider
// ---------------------------------------------------------------------------

/// Backward pass of the divider layer: the layer is linear and holomorphic,
/// so the adjoint redistributes each half-length pair back to the two bins
/// it came from.
pub fn divider_backward(
    input_len: usize,
    channels: usize,
    upstream: &DualGradient,
) -> Result<DualGradient, WirtingerError> {
    if !input_len.is_multiple_of(2) {
        return Err(WirtingerError::Layer(LayerError::OddDividerInput(input_len)));
    }
    let half = input_len / 2;
    if upstream.len() != channels * input_len {
        return Err(WirtingerError::ShapeMismatch {
            expected: channels * input_len,
            got: upstream.len(),
        });
    }
    let mut out = DualGradient::zeros(channels * input_len);
    for i in 0..channels {
        let even_base = 2 * i * half;
        let odd_base = (2 * i + 1) * half;
        let in_base = i * input_len;
        for k in 0..half {
            let angle = std::f64::consts::TAU * k as f64 / input_len as f64;
            let tw = Complex64::new(angle.cos(), angle.sin()); // w^{-k}
            let ue = upstream.d_z[even_base + k] * 0.5;
            let uo = upstream.d_z[odd_base + k] * 0.5 * tw;
            out.d_z[in_base + k] = ue + uo;
            out.d_z[in_base + k + half] = ue - uo;
            let ve = upstream.d_zbar[even_base + k] * 0.5;
            let vo = upstream.d_zbar[odd_base + k] * 0.5 * tw.conj();
            out.d_zbar[in_base + k] = ve + vo;
            out.d_zbar[in_base + k + half] = ve - vo;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Residual
// ---------------------------------------------------------------------------

/// Backward pass of the frequency-domain residual layer
/// `out = A(z . W1) . W2 + z`, composed from the Hadamard-product and
/// activation rules plus the identity path; filter gradients accumulate
/// into `acc`.
pub fn residual_backward_into(
    z: &SpectralTensor,
    w1: &[C64],
    w2: &[C64],
    upstream: &DualGradient,
    acc: &mut ResidualGrad,
) -> Result<DualGradient, WirtingerError> {
    z.expect_domain(Domain::Frequency)?;
    let n = z.len();
    let p = z.channels();
    if w1.len() != n || w2.len() != n {
        return Err(WirtingerError::ShapeMismatch {
            expected: n,
            got: if w1.len() != n { w1.len() } else { w2.len() },
        });
    }
    if upstream.len() != p * n {
        return Err(WirtingerError::ShapeMismatch {
            expected: p * n,
            got: upstream.len(),
        });
    }
    if acc.d_w1.len() != n || acc.d_w2.len() != n {
        return Err(WirtingerError::ShapeMismatch {
            expected: n,
            got: acc.d_w1.len().min(acc.d_w2.len()),
        });
    }
    let cfg = ActivationConfig::unit_norm();

    // Recompute the inner product and activation values.
    let mut inner = SpectralTensor::zeros(p, n, Domain::Frequency);
    for i in 0..p {
        for (t, (zv, wv)) in inner
            .channel_mut(i)
            .iter_mut()
            .zip(z.channel(i).iter().zip(w1))
        {
            *t = zv * wv;
        }
    }
    let activated = crate::layers::activation_forward(&inner, &cfg)?;

    // Through the outer Hadamard product and the W2 gradient.
    let mut d_a = DualGradient::zeros(p * n);
    for i in 0..p {
        let base = i * n;
        let a = activated.channel(i);
        for k in 0..n {
            let u = upstream.d_z[base + k];
            let v = upstream.d_zbar[base + k];
            d_a.d_z[base + k] = u * w2[k];
            d_a.d_zbar[base + k] = v * w2[k].conj();
            acc.d_w2[k] += v * a[k].conj();
        }
    }

    // Through the activation.
    let d_t = activation_backward(&inner, &d_a, &cfg)?;

    // Through the inner Hadamard product, plus the identity path.
    let mut input = DualGradient::zeros(p * n);
    for i in 0..p {
        let base = i * n;
        let zc = z.channel(i);
        for k in 0..n {
            input.d_z[base + k] = upstream.d_z[base + k] + d_t.d_z[base + k] * w1[k];
            input.d_zbar[base + k] =
                upstream.d_zbar[base + k] + d_t.d_zbar[base + k] * w1[k].conj();
            acc.d_w1[k] += d_t.d_zbar[base + k] * zc[k].conj();
        }
    }
    Ok(input)
}

/// Backward pass of the residual layer, returning fresh gradients.
pub fn residual_backward(
    z: &SpectralTensor,
    w1: &[C64],
    w2: &[C64],
    upstream: &DualGradient,
) -> Result<(DualGradient, ResidualGrad), WirtingerError> {
    let n = z.len();
    let mut acc = ResidualGrad {
        d_w1: vec![Complex64::ZERO; n],
        d_w2: vec![Complex64::ZERO; n],
    };
    let input = residual_backward_into(z, w1, w2, upstream, &mut acc)?;
    Ok((input, acc))
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Backward pass of batch normalization, derived from the chain rule. The
/// batch couples through the mean and variance: with `c_j = z_j - mu`,
/// `s = 1/sqrt(sigma^2 + eps)`, `P = sum u c` and `Q = sum v conj(c)`,
/// `dL/dz_l = gamma s (u_l - mean(u)) - s^3/(2mN) conj(c_l) (gamma P + conj(gamma) Q)`.
pub fn batchnorm_backward(
    batch: &[SpectralTensor],
    params: &BatchNormParams,
    upstream: &[DualGradient],
) -> Result<(Vec<DualGradient>, BatchNormGrad), WirtingerError> {
    let Some(first) = batch.first() else {
        return Err(WirtingerError::Layer(LayerError::EmptyBatch));
    };
    if upstream.len() != batch.len() {
        return Err(WirtingerError::ShapeMismatch {
            expected: batch.len(),
            got: upstream.len(),
        });
    }
    let (p, n) = (first.channels(), first.len());
    let m = batch.len();
    for (t, g) in batch.iter().zip(upstream) {
        if t.channels() != p || t.len() != n || g.len() != p * n {
            return Err(WirtingerError::ShapeMismatch {
                expected: p * n,
                got: g.len(),
            });
        }
    }

    let mut grads: Vec<DualGradient> = (0..m).map(|_| DualGradient::zeros(p * n)).collect();
    let mut d_gamma = vec![Complex64::ZERO; p];
    let mut d_beta = vec![Complex64::ZERO; p * n];

    for k in 0..p {
        // Channel statistics.
        let mut mu = vec![Complex64::ZERO; n];
        for t in batch {
            for (acc, v) in mu.iter_mut().zip(t.channel(k)) {
                *acc += v;
            }
        }
        mu.iter_mut().for_each(|v| *v /= m as f64);
        let centered: Vec<Vec<C64>> = batch
            .iter()
            .map(|t| t.channel(k).iter().zip(&mu).map(|(z, m)| z - m).collect())
            .collect();
        let sigma_sq = centered
            .iter()
            .flat_map(|c| c.iter())
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / (m * n) as f64;
        let s = 1.0 / (sigma_sq + params.epsilon).sqrt();
        let gamma = params.gamma[k];

        // Batch-wide couplings.
        let mut u_mean = vec![Complex64::ZERO; n];
        let mut v_mean = vec![Complex64::ZERO; n];
        let mut p_sum = Complex64::ZERO;
        let mut q_sum = Complex64::ZERO;
        for (g, c) in upstream.iter().zip(&centered) {
            let u = &g.d_z[k * n..(k + 1) * n];
            let v = &g.d_zbar[k * n..(k + 1) * n];
            for t in 0..n {
                u_mean[t] += u[t];
                v_mean[t] += v[t];
                p_sum += u[t] * c[t];
                q_sum += v[t] * c[t].conj();
            }
        }
        u_mean.iter_mut().for_each(|v| *v /= m as f64);
        v_mean.iter_mut().for_each(|v| *v /= m as f64);

        let mix = gamma * p_sum + gamma.conj() * q_sum;
        let shared = s.powi(3) / (2.0 * (m * n) as f64);

        for (l, (g_out, c)) in grads.iter_mut().zip(&centered).enumerate() {
            let u = &upstream[l].d_z[k * n..(k + 1) * n];
            let v = &upstream[l].d_zbar[k * n..(k + 1) * n];
            for t in 0..n {
                g_out.d_z[k * n + t] =
                    gamma * s * (u[t] - u_mean[t]) - c[t].conj() * shared * mix;
                g_out.d_zbar[k * n + t] =
                    gamma.conj() * s * (v[t] - v_mean[t]) - c[t] * shared * mix;
            }
        }

        d_gamma[k] = q_sum * s;
        for g in upstream {
            let v = &g.d_zbar[k * n..(k + 1) * n];
            for t in 0..n {
                d_beta[k * n + t] += v[t];
            }
        }
    }
    Ok((grads, BatchNormGrad { d_gamma, d_beta }))
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Numerical Wirtinger gradients of a scalar-valued function by central
/// differences along the real and imaginary axes:
/// `dF/dz = (Dx F - i Dy F)/2`, `dF/dzbar = (Dx F + i Dy F)/2`.
pub fn fd_wirtinger_oracle<F>(
    mut f: F,
    at: &[C64],
    h: f64,
) -> Result<DualGradient, WirtingerError>
where
    F: FnMut(&[C64]) -> f64,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(WirtingerError::BadStep(h));
    }
    let mut probe = at.to_vec();
    let mut d_z = Vec::with_capacity(at.len());
    let mut d_zbar = Vec::with_capacity(at.len());
    for j in 0..at.len() {
        let original = probe[j];
        let mut eval = |p: &mut Vec<C64>, value: C64| -> Result<f64, WirtingerError> {
            p[j] = value;
            let out = f(p);
            if !out.is_finite() {
                return Err(WirtingerError::NonFiniteEvaluation);
            }
            Ok(out)
        };
        let re_plus = eval(&mut probe, original + Complex64::new(h, 0.0))?;
        let re_minus = eval(&mut probe, original - Complex64::new(h, 0.0))?;
        let im_plus = eval(&mut probe, original + Complex64::new(0.0, h))?;
        let im_minus = eval(&mut probe, original - Complex64::new(0.0, h))?;
        probe[j] = original;
        let dx = (re_plus - re_minus) / (2.0 * h);
        let dy = (im_plus - im_minus) / (2.0 * h);
        d_z.push(Complex64::new(dx, -dy) * 0.5);
        d_zbar.push(Complex64::new(dx, dy) * 0.5);
    }
    DualGradient::new(d_z, d_zbar)
}

/// Relative error metric used by the gradient suites:
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-8)
}

/// Largest relative error between two gradient vectors.
pub fn max_relative_error(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers;
    use crate::spectral::KernelPattern;

    fn c(re: f64, im: f64) -> C64 {
        Complex64::new(re, im)
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<C64> {
        let mut state = seed | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        (0..n).map(|_| c(next(), next())).collect()
    }

    /// Real-valued probe `T(y) = sum_j Re(conj(a_j) y_j)`, whose dual
    /// gradient at y is exactly `(conj(a)/2, a/2)`.
    fn probe_upstream(a: &[C64]) -> DualGradient {
        DualGradient {
            d_z: a.iter().map(|x| x.conj() * 0.5).collect(),
            d_zbar: a.iter().map(|x| x * 0.5).collect(),
        }
    }

    fn probe_value(a: &[C64], y: &[C64]) -> f64 {
        a.iter().zip(y).map(|(av, yv)| (av.conj() * yv).re).sum()
    }

    #[test]
    fn oracle_on_abs_squared() {
        // f(z) = |z|^2 has dF/dz = conj(z), dF/dzbar = z.
        let at = [c(0.7, -0.3)];
        let g = fd_wirtinger_oracle(|z| z[0].norm_sqr(), &at, 1e-6).unwrap();
        assert!((g.d_z[0] - at[0].conj()).norm() < 1e-9);
        assert!((g.d_zbar[0] - at[0]).norm() < 1e-9);
    }

    #[test]
    fn oracle_on_real_part() {
        let at = [c(1.3, 2.1)];
        let g = fd_wirtinger_oracle(|z| z[0].re, &at, 1e-6).unwrap();
        assert!((g.d_z[0] - c(0.5, 0.0)).norm() < 1e-9);
        assert!((g.d_zbar[0] - c(0.5, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn oracle_rejects_bad_step_and_nan() {
        assert!(matches!(
            fd_wirtinger_oracle(|_| 0.0, &[c(1.0, 0.0)], 1e-2),
            Err(WirtingerError::BadStep(_))
        ));
        assert!(matches!(
            fd_wirtinger_oracle(|_| f64::NAN, &[c(1.0, 0.0)], 1e-6),
            Err(WirtingerError::NonFiniteEvaluation)
        ));
    }

    #[test]
    fn loss_gradient_on_known_point() {
        let g = loss_backward(&[c(1.0, 0.0), c(1.0, 0.0)], &[1.0, 0.0]).unwrap();
        assert!((g.d_z[0] - c(-0.5, 0.0)).norm() < 1e-12);
        assert!((g.d_z[1] - c(0.5, 0.0)).norm() < 1e-12);
        assert!(g.conjugate_defect() < 1e-15);
    }

    #[test]
    fn loss_gradient_vanishes_on_aligned_one_hot() {
        let g = loss_backward(&[C64::ZERO, c(2.0, -1.0), C64::ZERO], &[0.0, 1.0, 0.0]).unwrap();
        assert!(g.d_z[1].norm() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_oracle() {
        for seed in 0..10 {
            let z = rand_vec(6, 900 + seed);
            let mut y = vec![0.0; 6];
            y[(seed % 6) as usize] = 0.7;
            y[((seed + 2) % 6) as usize] += 0.3;
            let analytic = loss_backward(&z, &y).unwrap();
            let fd = fd_wirtinger_oracle(
                |probe| layers::cross_entropy_loss(probe, &y).unwrap(),
                &z,
                1e-6,
            )
            .unwrap();
            assert!(
                max_relative_error(&analytic.d_z, &fd.d_z) <= 1e-6,
                "seed {seed}"
            );
            assert!(max_relative_error(&analytic.d_zbar, &fd.d_zbar) <= 1e-6);
        }
    }

    #[test]
    fn loss_gradient_error_cases() {
        assert!(matches!(
            loss_backward(&[C64::ZERO, C64::ZERO], &[1.0, 0.0]),
            Err(WirtingerError::ZeroVector)
        ));
        assert!(matches!(
            loss_backward(&[C64::ZERO, c(1.0, 0.0)], &[1.0, 0.0]),
            Err(WirtingerError::UndefinedGradient { index: 0 })
        ));
    }

    #[test]
    fn activation_backward_zero_upstream_is_zero() {
        let z = SpectralTensor::new(1, 4, Domain::Frequency, rand_vec(4, 3)).unwrap();
        let g = activation_backward(
            &z,
            &DualGradient::zeros(4),
            &ActivationConfig::unit_norm(),
        )
        .unwrap();
        assert!(g.d_z.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unit_norm_is_magnitude_invariant_on_the_real_axis() {
        // For z = x > 0 real and N = 1, f(z) = z/|z| is locally constant
        // along the real direction: df/dx = dF/dz + dF/dzbar = 0.
        let z = SpectralTensor::new(1, 1, Domain::Frequency, vec![c(1.7, 0.0)]).unwrap();
        let upstream = DualGradient {
            d_z: vec![c(0.5, 0.0)],
            d_zbar: vec![c(0.5, 0.0)],
        };
        let g = activation_backward(&z, &upstream, &ActivationConfig::unit_norm()).unwrap();
        let real_direction = g.d_z[0] + g.d_zbar[0];
        assert!(real_direction.norm() < 1e-12);
    }

    #[test]
    fn activation_backward_matches_dense_contraction_and_oracle() {
        for cfg in [
            ActivationConfig::unit_norm(),
            ActivationConfig::georgiou(0.6, 1.7).unwrap(),
        ] {
            for domain in [Domain::Frequency, Domain::Spatial] {
                for seed in 0..5 {
                    let n = 5usize;
                    let zdata = rand_vec(n, 7000 + seed);
                    let z = SpectralTensor::new(1, n, domain, zdata.clone()).unwrap();
                    let a = rand_vec(n, 8000 + seed);
                    let upstream = probe_upstream(&a);
                    let analytic = activation_backward(&z, &upstream, &cfg).unwrap();
                    let fd = fd_wirtinger_oracle(
                        |probe| {
                            let t =
                                SpectralTensor::new(1, n, domain, probe.to_vec()).unwrap();
                            let out = layers::activation_forward(&t, &cfg).unwrap();
                            probe_value(&a, out.data())
                        },
                        &zdata,
                        1e-6,
                    )
                    .unwrap();
                    assert!(
                        max_relative_error(&analytic.d_z, &fd.d_z) <= 1e-6,
                        "cfg {cfg:?} {domain:?} seed {seed}"
                    );
                    assert!(max_relative_error(&analytic.d_zbar, &fd.d_zbar) <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn hadamard_backward_delta_kernel_passes_upstream_through() {
        let pattern = KernelPattern::new(vec![0], 4).unwrap();
        let params = layers::HadamardLayerParams::new(
            pattern,
            1,
            1,
            vec![c(1.0, 0.0)],
            HadamardBias::None,
        )
        .unwrap();
        let z = SpectralTensor::new(1, 4, Domain::Frequency, rand_vec(4, 15)).unwrap();
        let upstream = probe_upstream(&rand_vec(4, 16));
        let (input, _) = hadamard_backward(&z, &params, &upstream).unwrap();
        for (a, b) in input.d_z.iter().zip(&upstream.d_z) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn hadamard_backward_zero_upstream_zeroes_everything() {
        let pattern = KernelPattern::new(vec![0, 1], 4).unwrap();
        let params = layers::HadamardLayerParams::new(
            pattern,
            1,
            2,
            rand_vec(4, 31),
            HadamardBias::ScalarPerChannel(rand_vec(2, 32)),
        )
        .unwrap();
        let z = SpectralTensor::new(1, 4, Domain::Frequency, rand_vec(4, 33)).unwrap();
        let (input, grad) = hadamard_backward(&z, &params, &DualGradient::zeros(8)).unwrap();
        assert!(input.d_z.iter().all(|v| v.norm() == 0.0));
        assert!(grad.d_weights.iter().all(|v| v.norm() == 0.0));
        assert!(grad.d_bias.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn fc_backward_delta_filter_hits_first_coordinate() {
        let mut w = vec![C64::ZERO; 4];
        w[0] = c(1.0, 0.0);
        let params = layers::FcLayerParams::new(4, 1, 1, w, None).unwrap();
        let z = SpectralTensor::new(1, 4, Domain::Frequency, rand_vec(4, 41)).unwrap();
        let upstream = probe_upstream(&rand_vec(1, 42));
        let (input, _) = fc_backward(&z, &params, &upstream).unwrap();
        assert!(input.d_z[0].norm() > 0.0);
        for k in 1..4 {
            assert_eq!(input.d_z[k], C64::ZERO);
        }
    }

    #[test]
    fn divider_backward_matches_oracle() {
        let n = 8usize;
        for seed in 0..5 {
            let zdata = rand_vec(n, 600 + seed);
            let a = rand_vec(n, 700 + seed);
            let upstream = probe_upstream(&a);
            let analytic = divider_backward(n, 1, &upstream).unwrap();
            let fd = fd_wirtinger_oracle(
                |probe| {
                    let t = SpectralTensor::new(1, n, Domain::Frequency, probe.to_vec()).unwrap();
                    let out = layers::divider_forward(&t).unwrap();
                    probe_value(&a, out.data())
                },
                &zdata,
                1e-6,
            )
            .unwrap();
            assert!(max_relative_error(&analytic.d_z, &fd.d_z) <= 1e-6);
            assert!(max_relative_error(&analytic.d_zbar, &fd.d_zbar) <= 1e-6);
        }
    }

    #[test]
    fn conjugate_symmetry_is_preserved_through_layers() {
        // Conjugate-paired upstream stays conjugate-paired through each
        // backward op, as it must for a real-valued terminal loss.
        let n = 6;
        let z = SpectralTensor::new(2, n, Domain::Frequency, rand_vec(2 * n, 51)).unwrap();
        let upstream = probe_upstream(&rand_vec(2 * n, 52));
        let g = activation_backward(&z, &upstream, &ActivationConfig::unit_norm()).unwrap();
        assert!(g.conjugate_defect() <= 1e-12);

        let pattern = KernelPattern::new(vec![0, 2], n).unwrap();
        let params = layers::HadamardLayerParams::new(
            pattern,
            2,
            3,
            rand_vec(3 * 2 * 2, 53),
            HadamardBias::None,
        )
        .unwrap();
        let upstream3 = probe_upstream(&rand_vec(3 * n, 54));
        let (gi, _) = hadamard_backward(&z, &params, &upstream3).unwrap();
        assert!(gi.conjugate_defect() <= 1e-12);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let n = 5;
        let z = SpectralTensor::new(1, n, Domain::Frequency, rand_vec(n, 61)).unwrap();
        let cfg = ActivationConfig::unit_norm();
        let u1 = probe_upstream(&rand_vec(n, 62));
        let u2 = probe_upstream(&rand_vec(n, 63));
        let combined = DualGradient {
            d_z: u1.d_z.iter().zip(&u2.d_z).map(|(a, b)| a + b).collect(),
            d_zbar: u1.d_zbar.iter().zip(&u2.d_zbar).map(|(a, b)| a + b).collect(),
        };
        let g1 = activation_backward(&z, &u1, &cfg).unwrap();
        let g2 = activation_backward(&z, &u2, &cfg).unwrap();
        let g12 = activation_backward(&z, &combined, &cfg).unwrap();
        for k in 0..n {
            assert!((g12.d_z[k] - (g1.d_z[k] + g2.d_z[k])).norm() <= 1e-12);
        }

        // Same linearity through the fully connected backward.
        let params = layers::FcLayerParams::new(n, 1, 2, rand_vec(2 * n, 64), None).unwrap();
        let fu1 = probe_upstream(&rand_vec(2, 65));
        let fu2 = probe_upstream(&rand_vec(2, 66));
        let fcombined = DualGradient {
            d_z: fu1.d_z.iter().zip(&fu2.d_z).map(|(a, b)| a + b).collect(),
            d_zbar: fu1
                .d_zbar
                .iter()
                .zip(&fu2.d_zbar)
                .map(|(a, b)| a + b)
                .collect(),
        };
        let (f1, _) = fc_backward(&z, &params, &fu1).unwrap();
        let (f2, _) = fc_backward(&z, &params, &fu2).unwrap();
        let (f12, _) = fc_backward(&z, &params, &fcombined).unwrap();
        for k in 0..n {
            assert!((f12.d_z[k] - (f1.d_z[k] + f2.d_z[k])).norm() <= 1e-12);
        }
    }
}
