//! Initialization, mini-batch Wirtinger gradient descent, and evaluation.
//!
//! Weights are drawn from a circularly symmetric complex Gaussian whose
//! per-part variance is `2 sigma^2 / N`, the frequency-domain image of
//! spatial white noise of deviation sigma. The update rule moves every
//! parameter along the negated conjugate gradient, which is the steepest
//! descent direction for a real loss.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{batch_iter, LabeledExample};
use crate::layers::{
    ActivationConfig, BiasMode, FcLayerParams, HadamardBias, HadamardLayerParams,
};
use crate::network::{
    GradientSet, LayerParams, LayerSpec, LossKind, NetworkError, NetworkSpec, ParameterSet,
    PreparedNetwork, ResidualParams,
};
use crate::spectral::{KernelPattern, C64};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Layer(#[from] crate::layers::LayerError),
    #[error("non-finite gradient in layer {layer}, coordinate {coordinate}")]
    NonFiniteGradient { layer: usize, coordinate: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("optimizer config invalid: {0}")]
    BadConfig(&'static str),
    #[error("label {label} outside the {outputs}-way output layer")]
    LabelOutOfRange { label: u8, outputs: usize },
}

/// Default spatial-noise deviation before the 2 sigma^2 / N scaling.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Hyperparameters of a training run.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sigma: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.002,
            batch_size: 100,
            epochs: 70,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive"));
        }
        if self.sigma <= 0.0 {
            return Err(TrainError::BadConfig("sigma must be positive"));
        }
        Ok(())
    }
}

/// One row of the metrics stream emitted per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

/// Draws `count` circularly symmetric complex Gaussians: independent real
/// and imaginary parts, each with variance `2 sigma^2 / n`.
pub fn circular_gaussian(count: usize, sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let std = sigma * (2.0 / n as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..count)
        .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Deterministic parameter initialization for a network spec: every complex
/// parameter of a layer with channel length N is drawn with per-part
/// variance `2 sigma^2 / N`.
pub fn init_params(spec: &NetworkSpec, sigma: f64, seed: u64) -> Result<ParameterSet, TrainError> {
    if sigma <= 0.0 {
        return Err(TrainError::BadConfig("sigma must be positive"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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
                    circular_gaussian(out_channels * in_channels * pattern.len(), sigma, len, &mut rng);
                let b = match bias {
                    BiasMode::None => HadamardBias::None,
                    BiasMode::ScalarPerChannel => HadamardBias::ScalarPerChannel(
                        circular_gaussian(*out_channels, sigma, len, &mut rng),
                    ),
                    BiasMode::FullVector => HadamardBias::FullVector(circular_gaussian(
                        out_channels * len,
                        sigma,
                        len,
                        &mut rng,
                    )),
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
                let weights = circular_gaussian(outputs * channels * len, sigma, len, &mut rng);
                let biases = bias.then(|| circular_gaussian(*outputs, sigma, len, &mut rng));
                LayerParams::Fc(FcLayerParams::new(len, channels, *outputs, weights, biases)?)
            }
            LayerSpec::Residual => {
                let w1 = circular_gaussian(len, sigma, len, &mut rng);
                let w2 = circular_gaussian(len, sigma, len, &mut rng);
                LayerParams::Residual(ResidualParams::new(w1, w2)?)
            }
            LayerSpec::Divider => {
                channels *= 2;
                len /= 2;
                LayerParams::Stateless
            }
            LayerSpec::Activation(_) | LayerSpec::Output => LayerParams::Stateless,
        });
    }
    Ok(ParameterSet::new(layers))
}

/// The 7x7 kernel pattern of the MNIST network: a square patch laid onto a
/// row-major 28x28 image, indices {0..6, 28..34, ..., 168..174}.
pub fn mnist_kernel_pattern() -> KernelPattern {
    KernelPattern::grid(7, 7, 28, 784).expect("static pattern is valid")
}

/// The MNIST architecture: one Hadamard layer with `filters` output
/// channels and a 7x7 kernel, a unit-norm activation, a 10-way fully
/// connected layer, and the output layer. Scalar biases throughout; with 50
/// filters the network has exactly 394510 complex parameters.
pub fn mnist_network_spec(filters: usize, seed: u64) -> NetworkSpec {
    NetworkSpec {
        input_len: 784,
        input_channels: 1,
        layers: vec![
            LayerSpec::Hadamard {
                pattern: mnist_kernel_pattern(),
                in_channels: 1,
                out_channels: filters,
                bias: BiasMode::ScalarPerChannel,
            },
            LayerSpec::Activation(ActivationConfig::unit_norm()),
            LayerSpec::Fc {
                outputs: 10,
                bias: true,
            },
            LayerSpec::Output,
        ],
        loss: LossKind::CrossEntropy,
        seed,
    }
}

/// Builds the MNIST network and initializes it with the default sigma.
pub fn build_mnist_network(
    filters: usize,
    seed: u64,
) -> Result<(NetworkSpec, ParameterSet), TrainError> {
    let spec = mnist_network_spec(filters, seed);
    let params = init_params(&spec, DEFAULT_SIGMA, seed)?;
    Ok((spec, params))
}

fn check_finite(layer: usize, g: &[C64]) -> Result<(), TrainError> {
    for (coordinate, v) in g.iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(TrainError::NonFiniteGradient { layer, coordinate });
        }
    }
    Ok(())
}

fn apply_update(w: &mut [C64], g: &[C64], learning_rate: f64) {
    debug_assert_eq!(w.len(), g.len());
    for (wv, gv) in w.iter_mut().zip(g) {
        *wv -= gv * learning_rate;
    }
}

/// One steepest-descent update `w <- w - eta * dL/dwbar` over every
/// parameter coordinate. `grads` must already be averaged over the batch.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    learning_rate: f64,
) -> Result<(), TrainError> {
    use crate::network::LayerGradient;
    for (layer, g) in grads.layers.iter().enumerate() {
        match g {
            LayerGradient::Hadamard(g) => {
                check_finite(layer, &g.d_weights)?;
                check_finite(layer, &g.d_bias)?;
            }
            LayerGradient::Fc(g) => {
                check_finite(layer, &g.d_weights)?;
                check_finite(layer, &g.d_bias)?;
            }
            LayerGradient::Residual(g) => {
                check_finite(layer, &g.d_w1)?;
                check_finite(layer, &g.d_w2)?;
            }
            LayerGradient::Stateless => {}
        }
    }
    for (p, g) in params.layers_mut().iter_mut().zip(&grads.layers) {
        match (p, g) {
            (LayerParams::Hadamard(p), LayerGradient::Hadamard(g)) => {
                apply_update(p.weights_mut(), &g.d_weights, learning_rate);
                match p.bias_mut() {
                    HadamardBias::None => {}
                    HadamardBias::ScalarPerChannel(b) | HadamardBias::FullVector(b) => {
                        apply_update(b, &g.d_bias, learning_rate)
                    }
                }
            }
            (LayerParams::Fc(p), LayerGradient::Fc(g)) => {
                apply_update(p.weights_mut(), &g.d_weights, learning_rate);
                if let Some(b) = p.biases_mut() {
                    apply_update(b, &g.d_bias, learning_rate);
                }
            }
            (LayerParams::Residual(p), LayerGradient::Residual(g)) => {
                apply_update(p.w1_mut(), &g.d_w1, learning_rate);
                apply_update(p.w2_mut(), &g.d_w2, learning_rate);
            }
            (LayerParams::Stateless, LayerGradient::Stateless) => {}
            _ => panic!("gradient set does not match parameter set"),
        }
    }
    Ok(())
}

/// Fixed work-unit size for parallel loops. Partial results are produced
/// per chunk and folded in chunk order, so the reduction tree is identical
/// regardless of thread count.
const PAR_CHUNK: usize = 8;

fn one_hot(label: u8, outputs: usize) -> Result<Vec<f64>, TrainError> {
    if label as usize >= outputs {
        return Err(TrainError::LabelOutOfRange { label, outputs });
    }
    let mut y = vec![0.0; outputs];
    y[label as usize] = 1.0;
    Ok(y)
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

struct BatchOutcome {
    loss_sum: f64,
    correct: usize,
    grads: GradientSet,
}

/// Loss, accuracy count, and summed gradients over one mini-batch.
/// Per-example work fans out to worker threads; partial sums come back in
/// ascending example order.
fn batch_gradients(
    net: &PreparedNetwork<'_>,
    params: &ParameterSet,
    examples: &[LabeledExample],
    indices: &[usize],
) -> Result<BatchOutcome, TrainError> {
    let outputs = net.output_width();
    let partials: Vec<Result<BatchOutcome, TrainError>> = indices
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            // One gradient accumulator per chunk; examples add into it.
            let mut grads = GradientSet::zeros_like(params);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &idx in chunk {
                let example = &examples[idx];
                let target = one_hot(example.label, outputs)?;
                let trace = net.forward_trace(&example.spectrum)?;
                let probs = crate::layers::output_probabilities(trace.final_z());
                if argmax(&probs) == example.label as usize {
                    correct += 1;
                }
                loss_sum += net.backprop_into(&trace, &target, &mut grads)?;
            }
            Ok(BatchOutcome {
                loss_sum,
                correct,
                grads,
            })
        })
        .collect();

    let mut total = BatchOutcome {
        loss_sum: 0.0,
        correct: 0,
        grads: GradientSet::zeros_like(params),
    };
    for partial in partials {
        let p = partial?;
        total.loss_sum += p.loss_sum;
        total.correct += p.correct;
        total.grads.accumulate(&p.grads);
    }
    Ok(total)
}

/// Accuracy and mean loss over a dataset, deterministic under parallelism.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParameterSet,
    dataset: &[LabeledExample],
) -> Result<(f64, f64), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let net = PreparedNetwork::build(spec, params)?;
    let outputs = net.output_width();
    let partials: Vec<Result<(f64, usize), TrainError>> = dataset
        .par_chunks(256)
        .map(|chunk| {
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for example in chunk {
                let target = one_hot(example.label, outputs)?;
                let (loss, probs) = net.loss_and_probabilities(&example.spectrum, &target)?;
                loss_sum += loss;
                if argmax(&probs) == example.label as usize {
                    correct += 1;
                }
            }
            Ok((loss_sum, correct))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for partial in partials {
        let (l, c) = partial?;
        loss_sum += l;
        correct += c;
    }
    Ok((
        correct as f64 / dataset.len() as f64,
        loss_sum / dataset.len() as f64,
    ))
}

/// Mini-batch Wirtinger gradient descent. Each epoch shuffles the training
/// set with a permutation derived from (seed, epoch), walks it in batches,
/// and reports metrics through the callback. Returns the trained parameters.
pub fn train(
    spec: &NetworkSpec,
    params: ParameterSet,
    train_set: &[LabeledExample],
    test_set: &[LabeledExample],
    cfg: &OptimizerConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<ParameterSet, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = params;
    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batch_iter(train_set.len(), cfg.batch_size, spec.seed, epoch) {
            let outcome = {
                let net = PreparedNetwork::build(spec, &params)?;
                batch_gradients(&net, &params, train_set, &batch)?
            };
            loss_sum += outcome.loss_sum;
            correct += outcome.correct;
            let mut grads = outcome.grads;
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut params, &grads, cfg.learning_rate)?;
        }
        let test_accuracy = if test_set.is_empty() {
            f64::NAN
        } else {
            evaluate(spec, &params, test_set)?.0
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
    }
    Ok(params)
}
