//! Command-line interface: train and evaluate frequency-domain networks on
//! MNIST, run the property-verification suites, and benchmark the fast
//! transform and Hadamard layers against their naive twins.
//!
//! Exit codes: 0 success, 1 bad flags, 2 data or checkpoint errors,
//! 3 numerical abort during training, 4 a verify property failed.

use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use hadamard_net::checkpoint::{self, Checkpoint, TrainingMeta};
use hadamard_net::data::{load_idx, precompute_spectra, LabeledExample};
use hadamard_net::layers::{self, HadamardBias, HadamardLayerParams};

use hadamard_net::oracle;
use hadamard_net::spectral::{Domain, FftPlan, SpectralTensor};
use hadamard_net::training::{self, EpochMetrics, OptimizerConfig, TrainError};
use hadamard_net::verify::{run_suite, VerifyConfig};

const EXIT_FLAGS: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hadamard",
    about = "Complex-valued networks trained in the frequency domain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on an MNIST-format dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test set.
    Eval(EvalArgs),
    /// Run every property suite and print one line per property.
    Verify(VerifyArgs),
    /// Compare fast and naive implementations at matching shapes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    filters: usize,
    #[arg(long, default_value_t = 70)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Constant learning rate.
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    /// Initialization scale before the 2*sigma^2/N variance split.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Per-epoch CSV metrics: epoch,train_loss,train_acc,test_acc,seconds.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated channel lengths for the transform suites.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,8,16,49,784")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Force the named property to fail (test harness hook).
    #[arg(long, hide = true)]
    inject_failure: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "49,784")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not flag errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_FLAGS,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

struct Dataset {
    train: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
}

fn load_dataset(dir: &Path) -> Result<Dataset, String> {
    let file = |name: &str| dir.join(name);
    if !dir.is_dir() {
        return Err(format!("data directory not found: {}", dir.display()));
    }
    let train_pairs = load_idx(
        &file("train-images-idx3-ubyte"),
        &file("train-labels-idx1-ubyte"),
    )
    .map_err(|e| e.to_string())?;
    let test_pairs = load_idx(
        &file("t10k-images-idx3-ubyte"),
        &file("t10k-labels-idx1-ubyte"),
    )
    .map_err(|e| e.to_string())?;
    Ok(Dataset {
        train: precompute_spectra(&train_pairs, false),
        test: precompute_spectra(&test_pairs, false),
    })
}

fn cmd_train(args: TrainArgs) -> ExitCode {
    let dataset = match load_dataset(&args.data_dir) {
        Ok(d) => d,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    eprintln!(
        "loaded {} training / {} test examples",
        dataset.train.len(),
        dataset.test.len()
    );

    let spec = training::mnist_network_spec(args.filters, args.seed);
    let params = match training::init_params(&spec, args.sigma, args.seed) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FLAGS);
        }
    };
    eprintln!(
        "network: {} filters, {} complex parameters",
        args.filters,
        params.param_count()
    );

    let cfg = OptimizerConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        sigma: args.sigma,
    };

    let mut metrics_file = match args.metrics_out.as_deref().map(create_metrics_file) {
        Some(Ok(f)) => Some(f),
        Some(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
        None => None,
    };
    let mut last: Option<EpochMetrics> = None;
    let result = training::train(
        &spec,
        params,
        &dataset.train,
        &dataset.test,
        &cfg,
        |m| {
            println!(
                "epoch {:>3}  loss {:.4}  train_acc {:.4}  test_acc {:.4}  ({:.1}s)",
                m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.seconds
            );
            if let Some(f) = &mut metrics_file {
                let _ = writeln!(
                    f,
                    "{},{},{},{},{}",
                    m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.seconds
                );
            }
            last = Some(*m);
        },
    );
    let trained = match result {
        Ok(p) => p,
        Err(e @ TrainError::NonFiniteGradient { .. }) => {
            eprintln!("numerical abort: {e}");
            return ExitCode::from(EXIT_NUMERIC);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    };

    if let Some(path) = &args.checkpoint_out {
        let meta = last.map_or_else(TrainingMeta::default, |m| TrainingMeta {
            epoch: m.epoch as u64,
            train_loss: m.train_loss,
            train_accuracy: m.train_accuracy,
            test_accuracy: m.test_accuracy,
        });
        let ckpt = Checkpoint {
            spec,
            meta,
            params: trained,
        };
        if let Err(e) = checkpoint::save(path, &ckpt) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
        eprintln!("checkpoint written to {}", path.display());
    }
    ExitCode::SUCCESS
}

fn create_metrics_file(path: &Path) -> Result<std::fs::File, String> {
    let mut f = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    writeln!(f, "epoch,train_loss,train_acc,test_acc,seconds").map_err(|e| e.to_string())?;
    Ok(f)
}

fn cmd_eval(args: EvalArgs) -> ExitCode {
    let ckpt = match checkpoint::load(&args.checkpoint) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    let dataset = match load_dataset(&args.data_dir) {
        Ok(d) => d,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    match training::evaluate(&ckpt.spec, &ckpt.params, &dataset.test) {
        Ok((accuracy, mean_loss)) => {
            println!("test_accuracy {accuracy:.4}");
            println!("mean_loss {mean_loss:.6}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let cfg = VerifyConfig {
        sizes: args.sizes,
        trials: args.trials,
        seed: args.seed,
        inject_failure: args.inject_failure,
    };
    let reports = run_suite(&cfg);
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<34} max_error {:>12.3e}  tolerance {:>8.0e}  {}",
            r.name,
            r.max_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("all {} properties hold", reports.len());
        ExitCode::SUCCESS
    } else {
        eprintln!("failed properties: {}", failed.join(", "));
        ExitCode::from(EXIT_VERIFY)
    }
}

fn bench<F: FnMut()>(trials: usize, mut f: F) -> f64 {
    // One warm-up pass, then the average wall time per call.
    f();
    let start = Instant::now();
    for _ in 0..trials {
        f();
    }
    start.elapsed().as_nanos() as f64 / trials as f64
}

fn cmd_bench(args: BenchArgs) -> ExitCode {
    let mut state = 0x243f6a8885a308d3u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    println!("{:<28} {:>10} {:>14} {:>14}", "operation", "n", "ns/op", "speedup");
    for &n in &args.sizes {
        let data: Vec<_> = (0..n)
            .map(|_| hadamard_net::C64::new(next(), next()))
            .collect();
        let plan = FftPlan::new(n);
        let fast = bench(args.trials, || {
            std::hint::black_box(plan.dft(std::hint::black_box(&data)).unwrap());
        });
        let naive = bench(args.trials.min(5), || {
            std::hint::black_box(oracle::naive_dft(std::hint::black_box(&data)));
        });
        println!("{:<28} {:>10} {:>14.0} {:>14.1}x", "dft fast", n, fast, 1.0);
        println!(
            "{:<28} {:>10} {:>14.0} {:>14.1}x",
            "dft naive", n, naive, naive / fast
        );
    }

    // Hadamard forward vs spatial convolution forward at the MNIST shape.
    for &(n, taps, filters) in &[(784usize, 49usize, 50usize)] {
        if !args.sizes.contains(&n) {
            continue;
        }
        let stride = (n as f64).sqrt() as usize;
        let side = (taps as f64).sqrt() as usize;
        let pattern = hadamard_net::KernelPattern::grid(side, side, stride, n).unwrap();
        let weights: Vec<_> = (0..filters * pattern.len())
            .map(|_| hadamard_net::C64::new(next(), next()))
            .collect();
        let params = HadamardLayerParams::new(
            pattern,
            1,
            filters,
            weights,
            HadamardBias::None,
        )
        .unwrap();
        let spatial_data: Vec<_> = (0..n)
            .map(|_| hadamard_net::C64::new(next(), next()))
            .collect();
        let x = SpectralTensor::new(1, n, Domain::Spatial, spatial_data).unwrap();
        let z = x.to_frequency().unwrap();
        let prepared = layers::PreparedHadamard::new(&params).unwrap();
        let hadamard = bench(args.trials, || {
            std::hint::black_box(prepared.forward(std::hint::black_box(&z)).unwrap());
        });
        let conv = bench(args.trials.min(5), || {
            std::hint::black_box(layers::conv_space_forward(std::hint::black_box(&x), &params).unwrap());
        });
        println!(
            "{:<28} {:>10} {:>14.0} {:>14.1}x",
            format!("hadamard fwd ({filters}f)"),
            n,
            hadamard,
            1.0
        );
        println!(
            "{:<28} {:>10} {:>14.0} {:>14.1}x",
            format!("conv fwd ({filters}f)"),
            n,
            conv,
            conv / hadamard
        );
    }
    ExitCode::SUCCESS
}
