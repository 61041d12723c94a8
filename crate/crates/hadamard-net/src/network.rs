//! Network assembly: declarative layer pipelines over frequency-domain
//! tensors, their parameter sets, and the composed forward/backward passes.
//!
//! A network runs entirely in the frequency domain. Input spectra enter the
//! first layer directly (the input transform lives in the data pipeline),
//! tensors flow through Hadamard/activation/divider/residual layers, a fully
//! connected layer collapses to a complex vector, and the terminal output
//! layer turns amplitudes into probabilities inside the loss.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    ActivationConfig, BiasMode, FcLayerParams, HadamardBias, HadamardLayerParams, LayerError,
    PreparedHadamard,
};
use crate::spectral::{Domain, KernelPattern, SpectralTensor, C64};
use crate::wirtinger::{
    activation_backward, divider_backward, fc_backward_into, hadamard_backward_into,
    loss_backward, residual_backward_into, FcGrad, HadamardGrad, ResidualGrad, WirtingerError,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Wirtinger(#[from] WirtingerError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error("layer {index}: expected {expected}, found {found}")]
    ShapeChain {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("network must end with exactly one output layer")]
    MissingOutput,
    #[error("layer {index}: nothing may follow the output layer")]
    LayerAfterOutput { index: usize },
    #[error("parameter set does not match the network spec at layer {index}")]
    ParamMismatch { index: usize },
    #[error("input has {got} values, spec expects {expected}")]
    BadInput { expected: usize, got: usize },
    #[error("target distribution has {got} entries, network outputs {expected}")]
    BadTarget { expected: usize, got: usize },
}

/// One layer descriptor in a network pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Hadamard {
        pattern: KernelPattern,
        in_channels: usize,
        out_channels: usize,
        bias: BiasMode,
    },
    Activation(ActivationConfig),
    /// Halve channel length, double channel count (frequency-native).
    Divider,
    /// Per-channel residual block with two shared length-N filters.
    Residual,
    Fc {
        outputs: usize,
        bias: bool,
    },
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    CrossEntropy,
}

/// Declarative network description: the layer pipeline plus the seed that
/// determines initialization and epoch shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_len: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
    pub seed: u64,
}

/// The tensor shape flowing between layers during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Tensor { channels: usize, len: usize },
    Vector { len: usize },
    Done,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Tensor { channels, len } => write!(f, "tensor {channels}x{len}"),
            Stage::Vector { len } => write!(f, "vector of {len}"),
            Stage::Done => write!(f, "terminated pipeline"),
        }
    }
}

impl NetworkSpec {
    /// Checks that adjacent layer shapes chain and that exactly one output
    /// layer terminates the pipeline. Returns the final output width.
    pub fn validate(&self) -> Result<usize, NetworkError> {
        let mut stage = Stage::Tensor {
            channels: self.input_channels,
            len: self.input_len,
        };
        let mut out_width = None;
        for (index, layer) in self.layers.iter().enumerate() {
            if stage == Stage::Done {
                return Err(NetworkError::LayerAfterOutput { index });
            }
            stage = match (layer, stage) {
                (
                    LayerSpec::Hadamard {
                        pattern,
                        in_channels,
                        out_channels,
                        ..
                    },
                    Stage::Tensor { channels, len },
                ) if *in_channels == channels && pattern.target_len() == len => Stage::Tensor {
                    channels: *out_channels,
                    len,
                },
                (LayerSpec::Activation(_), s @ Stage::Tensor { .. }) => s,
                (LayerSpec::Divider, Stage::Tensor { channels, len }) if len % 2 == 0 => {
                    Stage::Tensor {
                        channels: channels * 2,
                        len: len / 2,
                    }
                }
                (LayerSpec::Residual, s @ Stage::Tensor { .. }) => s,
                (LayerSpec::Fc { outputs, .. }, Stage::Tensor { .. }) => {
                    Stage::Vector { len: *outputs }
                }
                (LayerSpec::Output, Stage::Vector { len }) => {
                    out_width = Some(len);
                    Stage::Done
                }
                (layer, stage) => {
                    return Err(NetworkError::ShapeChain {
                        index,
                        expected: format!("{layer:?} cannot consume"),
                        found: stage.to_string(),
                    })
                }
            };
        }
        match (stage, out_width) {
            (Stage::Done, Some(w)) => Ok(w),
            _ => Err(NetworkError::MissingOutput),
        }
    }

    /// Shape of the tensor entering layer `index`, assuming a valid spec.
    fn stage_before(&self, index: usize) -> Stage {
        let mut stage = Stage::Tensor {
            channels: self.input_channels,
            len: self.input_len,
        };
        for layer in &self.layers[..index] {
            stage = match (layer, stage) {
                (LayerSpec::Hadamard { out_channels, .. }, Stage::Tensor { len, .. }) => {
                    Stage::Tensor {
                        channels: *out_channels,
                        len,
                    }
                }
                (LayerSpec::Divider, Stage::Tensor { channels, len }) => Stage::Tensor {
                    channels: channels * 2,
                    len: len / 2,
                },
                (LayerSpec::Fc { outputs, .. }, _) => Stage::Vector { len: *outputs },
                (LayerSpec::Output, _) => Stage::Done,
                (_, s) => s,
            };
        }
        stage
    }
}

/// Residual layer weights: two length-N frequency-domain filters shared
/// across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    w1: Vec<C64>,
    w2: Vec<C64>,
}

impl ResidualParams {
    pub fn new(w1: Vec<C64>, w2: Vec<C64>) -> Result<Self, NetworkError> {
        if w1.len() != w2.len() {
            return Err(NetworkError::Spectral(
                crate::spectral::SpectralError::LengthMismatch {
                    expected: w1.len(),
                    got: w2.len(),
                },
            ));
        }
        Ok(ResidualParams { w1, w2 })
    }

    pub fn w1(&self) -> &[C64] {
        &self.w1
    }

    pub fn w2(&self) -> &[C64] {
        &self.w2
    }

    pub fn w1_mut(&mut self) -> &mut [C64] {
        &mut self.w1
    }

    pub fn w2_mut(&mut self) -> &mut [C64] {
        &mut self.w2
    }
}

/// Complex parameter tensors for one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Hadamard(HadamardLayerParams),
    Fc(FcLayerParams),
    Residual(ResidualParams),
    Stateless,
}

/// All trainable state of a network, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    layers: Vec<LayerParams>,
}

impl ParameterSet {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        ParameterSet { layers }
    }

    /// All-zero parameters with the shapes the network spec dictates; the
    /// skeleton that checkpoint loading fills in.
    pub fn zeros_for(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut channels = spec.input_channels;
        let mut len = spec.input_len;
        for layer in &spec.layers {
            layers.push(match layer {
                LayerSpec::Hadamard {
                    pattern,
                    in_channels,
                    out_channels,
                    bias,
                } => {
                    let weights =
                        vec![Complex64::ZERO; out_channels * in_channels * pattern.len()];
                    let b = match bias {
                        BiasMode::None => HadamardBias::None,
                        BiasMode::ScalarPerChannel => {
                            HadamardBias::ScalarPerChannel(vec![Complex64::ZERO; *out_channels])
                        }
                        BiasMode::FullVector => {
                            HadamardBias::FullVector(vec![Complex64::ZERO; out_channels * len])
                        }
                    };
                    channels = *out_channels;
                    LayerParams::Hadamard(HadamardLayerParams::new(
                        pattern.clone(),
                        *in_channels,
                        *out_channels,
                        weights,
                        b,
                    )?)
                }
                LayerSpec::Fc { outputs, bias } => {
                    let weights = vec![Complex64::ZERO; outputs * channels * len];
                    let biases = bias.then(|| vec![Complex64::ZERO; *outputs]);
                    LayerParams::Fc(FcLayerParams::new(len, channels, *outputs, weights, biases)?)
                }
                LayerSpec::Residual => LayerParams::Residual(ResidualParams::new(
                    vec![Complex64::ZERO; len],
                    vec![Complex64::ZERO; len],
                )?),
                LayerSpec::Divider => {
                    channels *= 2;
                    len /= 2;
                    LayerParams::Stateless
                }
                LayerSpec::Activation(_) | LayerSpec::Output => LayerParams::Stateless,
            });
        }
        Ok(ParameterSet { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Total number of complex parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_tensors(|t| count += t.len());
        count
    }

    /// Visits every parameter tensor in the canonical order (layer by layer,
    /// weights before biases). Checkpoints and the optimizer both walk this
    /// order, which is what makes them line up.
    pub fn visit_tensors<'a>(&'a self, mut f: impl FnMut(&'a [C64])) {
        for layer in &self.layers {
            match layer {
                LayerParams::Hadamard(p) => {
                    f(p.weights());
                    match p.bias() {
                        HadamardBias::None => {}
                        HadamardBias::ScalarPerChannel(b) | HadamardBias::FullVector(b) => f(b),
                    }
                }
                LayerParams::Fc(p) => {
                    f(p.weights());
                    if let Some(b) = p.biases() {
                        f(b);
                    }
                }
                LayerParams::Residual(p) => {
                    f(&p.w1);
                    f(&p.w2);
                }
                LayerParams::Stateless => {}
            }
        }
    }

    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&mut [C64])) {
        for layer in &mut self.layers {
            match layer {
                LayerParams::Hadamard(p) => {
                    f(p.weights_mut());
                    match p.bias_mut() {
                        HadamardBias::None => {}
                        HadamardBias::ScalarPerChannel(b) | HadamardBias::FullVector(b) => f(b),
                    }
                }
                LayerParams::Fc(p) => {
                    f(p.weights_mut());
                    if let Some(b) = p.biases_mut() {
                        f(b);
                    }
                }
                LayerParams::Residual(p) => {
                    f(&mut p.w1);
                    f(&mut p.w2);
                }
                LayerParams::Stateless => {}
            }
        }
    }

    /// Checks that each layer's parameters match the network spec's shapes.
    pub fn validate_against(&self, spec: &NetworkSpec) -> Result<(), NetworkError> {
        if self.layers.len() != spec.layers.len() {
            return Err(NetworkError::ParamMismatch {
                index: self.layers.len().min(spec.layers.len()),
            });
        }
        for (index, (layer, params)) in spec.layers.iter().zip(&self.layers).enumerate() {
            let ok = match (layer, params) {
                (
                    LayerSpec::Hadamard {
                        pattern,
                        in_channels,
                        out_channels,
                        bias,
                    },
                    LayerParams::Hadamard(p),
                ) => {
                    p.pattern() == pattern
                        && p.in_channels() == *in_channels
                        && p.out_channels() == *out_channels
                        && p.bias().mode() == *bias
                }
                (LayerSpec::Fc { outputs, bias }, LayerParams::Fc(p)) => {
                    p.outputs() == *outputs && p.biases().is_some() == *bias
                }
                (LayerSpec::Residual, LayerParams::Residual(p)) => {
                    if let Stage::Tensor { len, .. } = spec.stage_before(index) {
                        p.w1.len() == len
                    } else {
                        false
                    }
                }
                (
                    LayerSpec::Activation(_) | LayerSpec::Divider | LayerSpec::Output,
                    LayerParams::Stateless,
                ) => true,
                _ => false,
            };
            if !ok {
                return Err(NetworkError::ParamMismatch { index });
            }
        }
        Ok(())
    }
}

/// Per-layer conjugate parameter gradients, congruent with [`ParameterSet`].
#[derive(Debug, Clone)]
pub enum LayerGradient {
    Hadamard(HadamardGrad),
    Fc(FcGrad),
    Residual(ResidualGrad),
    Stateless,
}

#[derive(Debug, Clone)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| match l {
                LayerParams::Hadamard(p) => {
                    let bias_len = match p.bias() {
                        HadamardBias::None => 0,
                        HadamardBias::ScalarPerChannel(b) | HadamardBias::FullVector(b) => b.len(),
                    };
                    LayerGradient::Hadamard(HadamardGrad {
                        d_weights: vec![Complex64::ZERO; p.weights().len()],
                        d_bias: vec![Complex64::ZERO; bias_len],
                    })
                }
                LayerParams::Fc(p) => LayerGradient::Fc(FcGrad {
                    d_weights: vec![Complex64::ZERO; p.weights().len()],
                    d_bias: vec![Complex64::ZERO; p.biases().map_or(0, <[C64]>::len)],
                }),
                LayerParams::Residual(p) => LayerGradient::Residual(ResidualGrad {
                    d_w1: vec![Complex64::ZERO; p.w1.len()],
                    d_w2: vec![Complex64::ZERO; p.w2.len()],
                }),
                LayerParams::Stateless => LayerGradient::Stateless,
            })
            .collect();
        GradientSet { layers }
    }

    /// Visits gradient tensors in the same canonical order as
    /// [`ParameterSet::visit_tensors`].
    pub fn visit_tensors<'a>(&'a self, mut f: impl FnMut(&'a [C64])) {
        for layer in &self.layers {
            match layer {
                LayerGradient::Hadamard(g) => {
                    f(&g.d_weights);
                    if !g.d_bias.is_empty() {
                        f(&g.d_bias);
                    }
                }
                LayerGradient::Fc(g) => {
                    f(&g.d_weights);
                    if !g.d_bias.is_empty() {
                        f(&g.d_bias);
                    }
                }
                LayerGradient::Residual(g) => {
                    f(&g.d_w1);
                    f(&g.d_w2);
                }
                LayerGradient::Stateless => {}
            }
        }
    }

    fn pair_slices<'a>(a: &'a mut Vec<C64>, b: &'a [C64]) -> (&'a mut [C64], &'a [C64]) {
        (a.as_mut_slice(), b)
    }

    /// Elementwise `self += other`; shapes must be congruent.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            let pairs: Vec<(&mut [C64], &[C64])> = match (mine, theirs) {
                (LayerGradient::Hadamard(a), LayerGradient::Hadamard(b)) => vec![
                    Self::pair_slices(&mut a.d_weights, &b.d_weights),
                    Self::pair_slices(&mut a.d_bias, &b.d_bias),
                ],
                (LayerGradient::Fc(a), LayerGradient::Fc(b)) => vec![
                    Self::pair_slices(&mut a.d_weights, &b.d_weights),
                    Self::pair_slices(&mut a.d_bias, &b.d_bias),
                ],
                (LayerGradient::Residual(a), LayerGradient::Residual(b)) => vec![
                    Self::pair_slices(&mut a.d_w1, &b.d_w1),
                    Self::pair_slices(&mut a.d_w2, &b.d_w2),
                ],
                (LayerGradient::Stateless, LayerGradient::Stateless) => vec![],
                _ => panic!("gradient sets are not congruent"),
            };
            for (dst, src) in pairs {
                debug_assert_eq!(dst.len(), src.len());
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            let slices: Vec<&mut Vec<C64>> = match layer {
                LayerGradient::Hadamard(g) => vec![&mut g.d_weights, &mut g.d_bias],
                LayerGradient::Fc(g) => vec![&mut g.d_weights, &mut g.d_bias],
                LayerGradient::Residual(g) => vec![&mut g.d_w1, &mut g.d_w2],
                LayerGradient::Stateless => vec![],
            };
            for s in slices {
                for v in s.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
}

/// A value flowing through the pipeline: a multichannel tensor before the
/// fully connected layer, a plain complex vector after it.
#[derive(Debug, Clone)]
enum StageValue {
    Tensor(SpectralTensor),
    Vector(Vec<C64>),
}

/// A network with per-batch precomputation done: Hadamard filter spectra are
/// transformed once and shared across every example of a parameter update.
pub struct PreparedNetwork<'a> {
    spec: &'a NetworkSpec,
    params: &'a ParameterSet,
    prepared: Vec<Option<PreparedHadamard>>,
    output_width: usize,
}

/// Layer-by-layer record of a forward pass, kept for the backward sweep.
pub struct ForwardTrace {
    inputs: Vec<StageValue>,
    final_z: Vec<C64>,
}

impl ForwardTrace {
    /// The complex vector entering the output layer.
    pub fn final_z(&self) -> &[C64] {
        &self.final_z
    }
}

impl<'a> PreparedNetwork<'a> {
    pub fn build(
        spec: &'a NetworkSpec,
        params: &'a ParameterSet,
    ) -> Result<Self, NetworkError> {
        let output_width = spec.validate()?;
        params.validate_against(spec)?;
        let mut prepared = Vec::with_capacity(spec.layers.len());
        for layer_params in params.layers() {
            prepared.push(match layer_params {
                LayerParams::Hadamard(p) => Some(PreparedHadamard::new(p)?),
                _ => None,
            });
        }
        Ok(PreparedNetwork {
            spec,
            params,
            prepared,
            output_width,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Runs the pipeline on an input spectrum (channel-major, frequency
    /// domain) and records each layer's input for the backward pass.
    pub fn forward_trace(&self, input: &[C64]) -> Result<ForwardTrace, NetworkError> {
        let expected = self.spec.input_channels * self.spec.input_len;
        if input.len() != expected {
            return Err(NetworkError::BadInput {
                expected,
                got: input.len(),
            });
        }
        let tensor = SpectralTensor::new(
            self.spec.input_channels,
            self.spec.input_len,
            Domain::Frequency,
            input.to_vec(),
        )?;
        let mut value = StageValue::Tensor(tensor);
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        for (index, layer) in self.spec.layers.iter().enumerate() {
            inputs.push(value);
            value = self.apply(index, layer, inputs.last().expect("just pushed"))?;
        }
        match value {
            StageValue::Vector(final_z) => Ok(ForwardTrace { inputs, final_z }),
            StageValue::Tensor(_) => Err(NetworkError::MissingOutput),
        }
    }

    /// Forward pass without the trace; returns the vector entering the
    /// output layer.
    pub fn forward(&self, input: &[C64]) -> Result<Vec<C64>, NetworkError> {
        Ok(self.forward_trace(input)?.final_z)
    }

    fn apply(
        &self,
        index: usize,
        layer: &LayerSpec,
        value: &StageValue,
    ) -> Result<StageValue, NetworkError> {
        Ok(match (layer, value) {
            (LayerSpec::Hadamard { .. }, StageValue::Tensor(t)) => {
                let op = self.prepared[index].as_ref().expect("prepared hadamard");
                StageValue::Tensor(op.forward(t)?)
            }
            (LayerSpec::Activation(cfg), StageValue::Tensor(t)) => {
                StageValue::Tensor(crate::layers::activation_forward(t, cfg)?)
            }
            (LayerSpec::Divider, StageValue::Tensor(t)) => {
                StageValue::Tensor(crate::layers::divider_forward(t)?)
            }
            (LayerSpec::Residual, StageValue::Tensor(t)) => {
                let LayerParams::Residual(p) = &self.params.layers()[index] else {
                    return Err(NetworkError::ParamMismatch { index });
                };
                StageValue::Tensor(crate::layers::residual_forward(t, &p.w1, &p.w2)?)
            }
            (LayerSpec::Fc { .. }, StageValue::Tensor(t)) => {
                let LayerParams::Fc(p) = &self.params.layers()[index] else {
                    return Err(NetworkError::ParamMismatch { index });
                };
                StageValue::Vector(crate::layers::fc_forward(t, p)?)
            }
            (LayerSpec::Output, StageValue::Vector(v)) => StageValue::Vector(v.clone()),
            _ => {
                return Err(NetworkError::ShapeChain {
                    index,
                    expected: format!("{layer:?}"),
                    found: "incompatible stage".into(),
                })
            }
        })
    }

    /// Cross-entropy loss and output probabilities for one example.
    pub fn loss_and_probabilities(
        &self,
        input: &[C64],
        target: &[f64],
    ) -> Result<(f64, Vec<f64>), NetworkError> {
        let z = self.forward(input)?;
        if target.len() != z.len() {
            return Err(NetworkError::BadTarget {
                expected: z.len(),
                got: target.len(),
            });
        }
        let loss = crate::layers::cross_entropy_loss(&z, target)?;
        Ok((loss, crate::layers::output_probabilities(&z)))
    }

    /// Full reverse-mode sweep: runs the forward pass, seeds the dual
    /// gradient at the loss, and composes the layer-local backward ops in
    /// reverse order. Returns the loss and per-parameter conjugate
    /// gradients.
    pub fn backprop(
        &self,
        input: &[C64],
        target: &[f64],
    ) -> Result<(f64, GradientSet), NetworkError> {
        let trace = self.forward_trace(input)?;
        self.backprop_from_trace(&trace, target)
    }

    pub fn backprop_from_trace(
        &self,
        trace: &ForwardTrace,
        target: &[f64],
    ) -> Result<(f64, GradientSet), NetworkError> {
        let mut grads = GradientSet::zeros_like(self.params);
        let loss = self.backprop_into(trace, target, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`Self::backprop_from_trace`], but parameter gradients are added
    /// into `grads` in place. The training loop reuses one accumulator
    /// across a whole work chunk, which keeps the per-example cost free of
    /// large allocations.
    pub fn backprop_into(
        &self,
        trace: &ForwardTrace,
        target: &[f64],
        grads: &mut GradientSet,
    ) -> Result<f64, NetworkError> {
        if target.len() != trace.final_z.len() {
            return Err(NetworkError::BadTarget {
                expected: trace.final_z.len(),
                got: target.len(),
            });
        }
        let loss = crate::layers::cross_entropy_loss(&trace.final_z, target)?;
        let mut upstream = loss_backward(&trace.final_z, target)?;

        for index in (0..self.spec.layers.len()).rev() {
            debug_assert!(
                upstream.conjugate_defect()
                    <= 1e-12
                        * upstream
                            .d_z
                            .iter()
                            .map(|c| c.norm())
                            .fold(1.0f64, f64::max),
                "dual gradient lost conjugate symmetry at layer {index}"
            );
            let layer = &self.spec.layers[index];
            let input_value = &trace.inputs[index];
            upstream = match (layer, input_value, &mut grads.layers[index]) {
                (LayerSpec::Output, _, _) => upstream,
                (LayerSpec::Fc { .. }, StageValue::Tensor(t), LayerGradient::Fc(acc)) => {
                    let LayerParams::Fc(p) = &self.params.layers()[index] else {
                        return Err(NetworkError::ParamMismatch { index });
                    };
                    fc_backward_into(t, p, &upstream, acc)?
                }
                (LayerSpec::Activation(cfg), StageValue::Tensor(t), _) => {
                    activation_backward(t, &upstream, cfg)?
                }
                (LayerSpec::Divider, StageValue::Tensor(t), _) => {
                    divider_backward(t.len(), t.channels(), &upstream)?
                }
                (
                    LayerSpec::Residual,
                    StageValue::Tensor(t),
                    LayerGradient::Residual(acc),
                ) => {
                    let LayerParams::Residual(p) = &self.params.layers()[index] else {
                        return Err(NetworkError::ParamMismatch { index });
                    };
                    residual_backward_into(t, &p.w1, &p.w2, &upstream, acc)?
                }
                (
                    LayerSpec::Hadamard { .. },
                    StageValue::Tensor(t),
                    LayerGradient::Hadamard(acc),
                ) => {
                    let op = self.prepared[index].as_ref().expect("prepared hadamard");
                    hadamard_backward_into(op, t, &upstream, acc)?
                }
                _ => return Err(NetworkError::ParamMismatch { index }),
            };
        }
        Ok(loss)
    }
}
