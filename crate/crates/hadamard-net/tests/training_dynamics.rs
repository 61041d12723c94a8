//! End-to-end training behavior on synthetic data: the loop learns, is
//! bit-reproducible, respects global phase symmetry, and survives a
//! checkpoint round-trip without changing its predictions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hadamard_net::checkpoint::{self, Checkpoint, TrainingMeta};
use hadamard_net::data::LabeledExample;
use hadamard_net::layers::ActivationConfig;
use hadamard_net::network::{
    LayerParams, LayerSpec, LossKind, NetworkSpec, ParameterSet, PreparedNetwork,
};
use hadamard_net::spectral::{dft, KernelPattern, C64};
use hadamard_net::training::{
    self, evaluate, init_params, sgd_step, train, OptimizerConfig,
};

/// A small separable task shaped like the real pipeline's data: each class
/// is a fixed pixel-space template with amplitude jitter and noise,
/// transformed to the frequency domain up front.
fn synthetic_dataset(
    n: usize,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Vec<LabeledExample> {
    let mut template_rng = ChaCha8Rng::seed_from_u64(999);
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..n).map(|_| template_rng.random::<f64>()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..per_class {
            let gain = 0.8 + 0.4 * rng.random::<f64>();
            let spatial: Vec<C64> = template
                .iter()
                .map(|&t| Complex64::new(gain * t + 0.2 * (rng.random::<f64>() - 0.5), 0.0))
                .collect();
            out.push(LabeledExample {
                spectrum: dft(&spatial).unwrap(),
                label: class as u8,
                spatial: None,
            });
        }
    }
    out
}

fn small_spec(n: usize, filters: usize, classes: usize, seed: u64) -> NetworkSpec {
    NetworkSpec {
        input_len: n,
        input_channels: 1,
        layers: vec![
            LayerSpec::Hadamard {
                pattern: KernelPattern::grid(2, 2, 4, n).unwrap(),
                in_channels: 1,
                out_channels: filters,
                bias: hadamard_net::layers::BiasMode::ScalarPerChannel,
            },
            LayerSpec::Activation(ActivationConfig::unit_norm()),
            LayerSpec::Fc {
                outputs: classes,
                bias: true,
            },
            LayerSpec::Output,
        ],
        loss: LossKind::CrossEntropy,
        seed,
    }
}

#[test]
fn training_learns_synthetic_classes() {
    let n = 16;
    let classes = 4;
    let train_set = synthetic_dataset(n, classes, 60, 11);
    let test_set = synthetic_dataset(n, classes, 25, 12);
    let spec = small_spec(n, 4, classes, 5);
    let params = init_params(&spec, 0.1, 5).unwrap();
    let cfg = OptimizerConfig {
        learning_rate: 0.05,
        batch_size: 20,
        epochs: 30,
        sigma: 0.1,
    };
    let mut final_acc = 0.0;
    let trained = train(&spec, params, &train_set, &test_set, &cfg, |m| {
        final_acc = m.test_accuracy;
    })
    .unwrap();
    assert!(
        final_acc >= 0.9,
        "synthetic task should be learnable, got {final_acc}"
    );
    let (acc, loss) = evaluate(&spec, &trained, &test_set).unwrap();
    assert!((acc - final_acc).abs() < 1e-12);
    assert!(loss.is_finite());
}

#[test]
fn training_is_bit_reproducible() {
    let n = 16;
    let train_set = synthetic_dataset(n, 3, 30, 21);
    let test_set = synthetic_dataset(n, 3, 10, 22);
    let spec = small_spec(n, 4, 3, 9);
    let cfg = OptimizerConfig {
        learning_rate: 0.01,
        batch_size: 16,
        epochs: 5,
        sigma: 0.1,
    };
    let run = || {
        let params = init_params(&spec, 0.1, 9).unwrap();
        let mut metrics = Vec::new();
        let trained = train(&spec, params, &train_set, &test_set, &cfg, |m| {
            metrics.push((
                m.train_loss.to_bits(),
                m.train_accuracy.to_bits(),
                m.test_accuracy.to_bits(),
            ));
        })
        .unwrap();
        (metrics, trained)
    };
    let (metrics_a, params_a) = run();
    let (metrics_b, params_b) = run();
    assert_eq!(metrics_a, metrics_b, "epoch metrics must be bit-identical");
    assert_eq!(params_a, params_b, "trained parameters must be identical");
}

#[test]
fn one_step_decreases_frozen_batch_loss() {
    let n = 16;
    let batch = synthetic_dataset(n, 4, 8, 31);
    let spec = small_spec(n, 4, 4, 13);
    let mut params = init_params(&spec, 0.1, 13).unwrap();

    let batch_loss = |p: &ParameterSet| -> f64 {
        let net = PreparedNetwork::build(&spec, p).unwrap();
        batch
            .iter()
            .map(|e| {
                let mut y = vec![0.0; 4];
                y[e.label as usize] = 1.0;
                net.loss_and_probabilities(&e.spectrum, &y).unwrap().0
            })
            .sum::<f64>()
            / batch.len() as f64
    };

    let before = batch_loss(&params);
    let net = PreparedNetwork::build(&spec, &params).unwrap();
    let mut grads = hadamard_net::network::GradientSet::zeros_like(&params);
    for e in &batch {
        let mut y = vec![0.0; 4];
        y[e.label as usize] = 1.0;
        let (_, g) = net.backprop(&e.spectrum, &y).unwrap();
        grads.accumulate(&g);
    }
    grads.scale(1.0 / batch.len() as f64);
    drop(net);
    sgd_step(&mut params, &grads, 1e-3).unwrap();
    let after = batch_loss(&params);
    assert!(
        after < before,
        "one small step must decrease the frozen-batch loss ({before} -> {after})"
    );
}

#[test]
fn twenty_steps_descend_with_at_most_two_small_upticks() {
    let n = 16;
    let batch = synthetic_dataset(n, 4, 10, 41);
    let spec = small_spec(n, 4, 4, 17);
    let mut params = init_params(&spec, 0.1, 17).unwrap();

    let mut losses = Vec::new();
    for _ in 0..20 {
        let net = PreparedNetwork::build(&spec, &params).unwrap();
        let mut grads = hadamard_net::network::GradientSet::zeros_like(&params);
        let mut loss_sum = 0.0;
        for e in &batch {
            let mut y = vec![0.0; 4];
            y[e.label as usize] = 1.0;
            let (loss, g) = net.backprop(&e.spectrum, &y).unwrap();
            loss_sum += loss;
            grads.accumulate(&g);
        }
        losses.push(loss_sum / batch.len() as f64);
        grads.scale(1.0 / batch.len() as f64);
        drop(net);
        sgd_step(&mut params, &grads, 1e-3).unwrap();
    }
    let mut upticks = 0;
    for w in losses.windows(2) {
        if w[1] > w[0] {
            upticks += 1;
            assert!(
                (w[1] - w[0]) / w[0] < 0.01,
                "uptick larger than 1%: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
    assert!(upticks <= 2, "{upticks} upticks in 20 frozen-batch steps");
}

#[test]
fn global_phase_rotation_of_fc_weights_preserves_accuracy() {
    let n = 16;
    let test_set = synthetic_dataset(n, 4, 20, 51);
    let spec = small_spec(n, 4, 4, 23);
    let params = init_params(&spec, 0.1, 23).unwrap();
    let (base_acc, _) = evaluate(&spec, &params, &test_set).unwrap();

    for theta in [std::f64::consts::PI / 7.0, std::f64::consts::PI / 3.0] {
        let rotation = Complex64::new(theta.cos(), theta.sin());
        let mut rotated = params.clone();
        for layer in rotated.layers_mut() {
            if let LayerParams::Fc(fc) = layer {
                for w in fc.weights_mut() {
                    *w *= rotation;
                }
                if let Some(bias) = fc.biases_mut() {
                    // The bias sits outside the rotated dot product; rotate
                    // it the opposite way so |output| is preserved exactly.
                    for b in bias.iter_mut() {
                        *b *= rotation.conj();
                    }
                }
            }
        }
        let (rot_acc, _) = evaluate(&spec, &rotated, &test_set).unwrap();
        assert_eq!(
            base_acc, rot_acc,
            "accuracy changed under global phase {theta}"
        );
    }
}

#[test]
fn random_init_sits_at_chance_level() {
    // Balanced 10-class labels on random inputs: a fresh network predicts at
    // chance level.
    let mut rng = ChaCha8Rng::seed_from_u64(0x61);
    let spec = training::mnist_network_spec(4, 3);
    let params = init_params(&spec, 0.1, 3).unwrap();
    let dataset: Vec<LabeledExample> = (0..2000)
        .map(|i| LabeledExample {
            spectrum: (0..784)
                .map(|_| Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0))
                .collect(),
            label: (i % 10) as u8,
            spatial: None,
        })
        .collect();
    let (acc, _) = evaluate(&spec, &params, &dataset).unwrap();
    assert!(
        (acc - 0.1).abs() <= 0.03,
        "random-init accuracy {acc} not within 0.1 +/- 0.03"
    );
}

#[test]
fn constant_one_hot_output_scores_label_frequency() {
    // Zero all weights and point the FC bias at class 2: the network emits
    // the same one-hot prediction everywhere, so accuracy equals the
    // frequency of that label in the dataset.
    let n = 16;
    let classes = 4;
    let spec = small_spec(n, 3, classes, 37);
    let mut params = init_params(&spec, 0.1, 37).unwrap();
    for layer in params.layers_mut() {
        if let LayerParams::Fc(fc) = layer {
            fc.weights_mut().iter_mut().for_each(|w| *w = Complex64::ZERO);
            let bias = fc.biases_mut().unwrap();
            bias.iter_mut().for_each(|b| *b = Complex64::ZERO);
            bias[2] = Complex64::new(1.0, 0.0);
        }
    }
    // 3 classes x 10 + 25 extras of class 2.
    let mut dataset = synthetic_dataset(n, classes, 10, 81);
    dataset.extend(synthetic_dataset(n, classes, 10, 82).into_iter().filter(|e| e.label == 2));
    dataset.extend(synthetic_dataset(n, classes, 15, 83).into_iter().filter(|e| e.label == 2));
    let class2 = dataset.iter().filter(|e| e.label == 2).count();
    let (acc, _) = evaluate(&spec, &params, &dataset).unwrap();
    assert!((acc - class2 as f64 / dataset.len() as f64).abs() < 1e-12);
}

#[test]
fn checkpoint_roundtrip_preserves_evaluation_exactly() {
    let n = 16;
    let train_set = synthetic_dataset(n, 3, 20, 71);
    let test_set = synthetic_dataset(n, 3, 10, 72);
    let spec = small_spec(n, 3, 3, 29);
    let params = init_params(&spec, 0.1, 29).unwrap();
    let cfg = OptimizerConfig {
        learning_rate: 0.01,
        batch_size: 10,
        epochs: 3,
        sigma: 0.1,
    };
    let trained = train(&spec, params, &train_set, &test_set, &cfg, |_| {}).unwrap();
    let (acc_before, loss_before) = evaluate(&spec, &trained, &test_set).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trained.hdnw");
    checkpoint::save(
        &path,
        &Checkpoint {
            spec: spec.clone(),
            meta: TrainingMeta::default(),
            params: trained,
        },
    )
    .unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let (acc_after, loss_after) = evaluate(&loaded.spec, &loaded.params, &test_set).unwrap();
    assert_eq!(acc_before, acc_after);
    assert_eq!(loss_before.to_bits(), loss_after.to_bits());
}
