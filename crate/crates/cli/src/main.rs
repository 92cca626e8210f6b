use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmswag_core::eval::{bma_predict, evaluate, point_predict, DEFAULT_BMA_SAMPLES};
use pmswag_core::experiment::{
    emit, layout_pathology, read_run, run_all, summarize, DataSource, ExperimentSpec, Summary,
};
use pmswag_core::posterior::{DeviationPlacement, SwagConfig, SwagState};
use pmswag_core::store::{BackendConfig, ElementWidth, Layout};
use pmswag_core::trainer::{
    Dataset, MlpModel, SgdTrainer, TrainConfig, DESK_LAYERS, FULL_SIZE_LAYERS,
};
use pmswag_core::{estimate_size, CoalescerConfig, Error, Result};
use serde::{Deserialize, Serialize};

const GIB: f64 = (1u64 << 30) as f64;
const MODEL_FILE: &str = "model.json";
const POSTERIOR_FILE: &str = "posterior.swag";

/// Streaming SWAG posteriors on tiered storage.
#[derive(Parser)]
#[command(name = "pmswag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Storage benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Train a model and collect its posterior.
    Train(TrainArgs),
    /// Evaluate point and model-averaged predictions of a trained run.
    Eval(EvalArgs),
    /// Deviation-matrix size for a parameter count and rank.
    Size(SizeArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run an experiment config and write records and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute the summary of a finished run directory.
    Summarize { dir: PathBuf },
    /// Compare row- and column-major column writes.
    Layout {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// e.g. `dram`, `pmem:lambda=3`, `tiered:cache=64K,block=4K`.
        #[arg(long, default_value = "dram")]
        backend: String,
        #[arg(long, default_value_t = 2)]
        passes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    RowMajor,
    ColMajor,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::RowMajor => Layout::RowMajor,
            LayoutArg::ColMajor => Layout::ColMajor,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// MNIST image file (IDX); synthetic data is used when absent.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// MNIST label file (IDX).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Seed of the synthetic data.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Number of synthetic training examples.
    #[arg(long, default_value_t = 1000)]
    examples: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated layer widths.
    #[arg(long, value_delimiter = ',', conflicts_with = "full_size")]
    layers: Option<Vec<usize>>,
    /// Use the 2.8M-parameter four-layer shape.
    #[arg(long)]
    full_size: bool,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    minibatch_size: usize,
    #[arg(long, default_value_t = 600)]
    minibatches_per_epoch: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
    #[arg(long, default_value_t = 0)]
    burn_in: u64,
    #[arg(long, default_value_t = 600)]
    max_columns: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Bytes per stored deviation entry (4 or 8).
    #[arg(long, default_value_t = 4)]
    width: u32,
    #[arg(long, default_value = "dram")]
    backend: String,
    #[arg(long, value_enum, default_value = "col-major")]
    layout: LayoutArg,
    /// Buffer this many deviation columns before writing.
    #[arg(long)]
    coalesce: Option<usize>,
    /// Output directory for the model and posterior checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// MNIST test images (IDX); otherwise held-out synthetic data.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Held-out synthetic examples.
    #[arg(long, default_value_t = 1000)]
    holdout: usize,
    #[arg(long, default_value_t = DEFAULT_BMA_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long)]
    params: f64,
    #[arg(long)]
    rank: u64,
    #[arg(long, default_value_t = 4)]
    width: u64,
}

/// What `train` leaves behind for `eval`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    /// Final SGD iterate.
    params: Vec<f64>,
    data: DataSource,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Bench(BenchCommand::Run { config, output }) => bench_run(&config, output),
        Command::Bench(BenchCommand::Summarize { dir }) => bench_summarize(&dir),
        Command::Bench(BenchCommand::Layout {
            rows,
            cols,
            backend,
            passes,
        }) => {
            let backend: BackendConfig = backend.parse()?;
            let report = layout_pathology(rows, cols, &backend, passes)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Size(args) => size(args),
    }
}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit_line(line: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit_line(&serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?)
}

fn print_summary(summary: &Summary) -> Result<()> {
    emit_line(&format!(
        "{:<12} {:>6} {:>14} {:>14} {:>10} {:>10}",
        "backend", "epochs", "wall_s", "simulated_s", "wall_x", "sim_x"
    ))?;
    for b in &summary.backends {
        for t in &b.totals {
            emit_line(&format!(
                "{:<12} {:>6} {:>14.6} {:>14.6} {:>10.3} {:>10.3}",
                b.backend, t.epochs, t.wall_mean, t.simulated_mean, t.wall_ratio, t.simulated_ratio
            ))?;
        }
    }
    Ok(())
}

fn bench_run(config: &Path, output: Option<PathBuf>) -> Result<u8> {
    let mut spec = ExperimentSpec::from_file(config)
        .map_err(|e| e.context(format!("reading {}", config.display())))?;
    if let Some(dir) = output {
        spec.output_dir = dir;
    }
    let results = run_all(&spec)?;
    let summary = match summarize(&results) {
        Ok(s) => Some(s),
        Err(Error::MissingBaseline(b)) => {
            eprintln!("note: no {b} backend in this run; ratios and summary.json skipped");
            None
        }
        Err(e) => return Err(e),
    };
    for path in emit(&results, summary.as_ref(), &spec.output_dir)? {
        eprintln!("wrote {}", path.display());
    }
    if let Some(s) = &summary {
        print_summary(s)?;
    }
    if let Some(r) = results.iter().find_map(|r| r.diverged()) {
        eprintln!(
            "error: training diverged at step {} (backend {}, repetition {})",
            r.diverged_at_step.unwrap_or_default(),
            r.backend,
            r.repetition
        );
        return Ok(4);
    }
    Ok(0)
}

fn bench_summarize(dir: &Path) -> Result<u8> {
    let results = read_run(dir)?;
    let summary = summarize(&results)?;
    emit(&results, Some(&summary), dir)?;
    print_summary(&summary)?;
    Ok(0)
}

fn width(bytes: u32) -> Result<ElementWidth> {
    ElementWidth::try_from(bytes).map_err(|_| Error::Config(format!("width must be 4 or 8, got {bytes}")))
}

fn train(args: TrainArgs) -> Result<u8> {
    let layer_sizes = if args.full_size {
        FULL_SIZE_LAYERS.to_vec()
    } else {
        args.layers.clone().unwrap_or_else(|| DESK_LAYERS.to_vec())
    };
    let data_source = match (&args.data.images, &args.data.labels) {
        (Some(images), Some(labels)) => DataSource::Mnist {
            images: images.clone(),
            labels: labels.clone(),
        },
        _ => DataSource::Synthetic {
            seed: args.data.data_seed,
            examples: args.data.examples,
        },
    };
    let data = data_source.load(layer_sizes[0], *layer_sizes.last().unwrap())?;
    let config = TrainConfig {
        minibatch_size: args.minibatch_size,
        minibatches_per_epoch: args.minibatches_per_epoch,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        rng_seed: args.seed,
    };
    let swag = SwagConfig {
        burn_in: args.burn_in,
        max_columns: args.max_columns,
        scale: args.scale,
        element_width: width(args.width)?,
        ..SwagConfig::default()
    };
    let backend: BackendConfig = args.backend.parse()?;
    let placement = DeviationPlacement::new(backend.build()?, "deviations")
        .with_layout(args.layout.into())
        .with_coalescer(args.coalesce.map(CoalescerConfig::when_full));
    let mut model = MlpModel::new(&layer_sizes, args.model_seed)?;
    let mut state = SwagState::new(swag, model.param_count(), &placement)?;
    let mut trainer = SgdTrainer::new(config)?;
    for epoch in 1..=config.epochs {
        let loss = trainer.sgd_epoch(&mut model, &data, |theta| state.update(theta))?;
        eprintln!("epoch {epoch}: mean loss {loss:.6}, rank {}", state.rank());
    }
    state.flush()?;

    fs::create_dir_all(&args.out).map_err(|e| Error::storage(&args.out, e))?;
    let ckpt = args.out.join(POSTERIOR_FILE);
    let file = fs::File::create(&ckpt).map_err(|e| Error::storage(&ckpt, e))?;
    state.checkpoint(std::io::BufWriter::new(file))?;
    let model_path = args.out.join(MODEL_FILE);
    let model_file = ModelFile {
        layer_sizes,
        params: model.flatten(),
        data: data_source,
    };
    let text = serde_json::to_string(&model_file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&model_path, text).map_err(|e| Error::storage(&model_path, e))?;
    print_json(&serde_json::json!({
        "params": model.param_count(),
        "steps": trainer.steps(),
        "accepted": state.accepted(),
        "rank": state.rank(),
        "checkpoint": ckpt,
        "model": model_path,
    }))?;
    Ok(0)
}

fn load_eval_data(args: &EvalArgs, model: &ModelFile) -> Result<Dataset> {
    if let (Some(images), Some(labels)) = (&args.images, &args.labels) {
        return Dataset::load_mnist(images, labels);
    }
    match &model.data {
        // Same generator, extended: the rows past the training set are unseen.
        DataSource::Synthetic { seed, examples } => {
            let classes = *model.layer_sizes.last().unwrap();
            let all = DataSource::Synthetic {
                seed: *seed,
                examples: examples + args.holdout,
            }
            .load(model.layer_sizes[0], classes)?;
            Ok(all.split_at(*examples)?.1)
        }
        DataSource::Mnist { .. } => Err(Error::Config(
            "the run was trained on MNIST; pass --images and --labels for the test set".into(),
        )),
    }
}

fn eval(args: EvalArgs) -> Result<u8> {
    let model_path = args.run.join(MODEL_FILE);
    let text = fs::read_to_string(&model_path).map_err(|e| Error::storage(&model_path, e))?;
    let model_file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", model_path.display())))?;
    let model = MlpModel::unflatten(&model_file.layer_sizes, &model_file.params)?;

    let ckpt = args.run.join(POSTERIOR_FILE);
    let file = fs::File::open(&ckpt).map_err(|e| Error::storage(&ckpt, e))?;
    let placement = DeviationPlacement::new(BackendConfig::default().build()?, "deviations");
    let state = SwagState::restore(std::io::BufReader::new(file), &placement)
        .map_err(|e| e.context(format!("reading {}", ckpt.display())))?;

    let data = load_eval_data(&args, &model_file)?;
    let point = point_predict(&model, &model_file.params, data.inputs())?;
    let bma = bma_predict(&model, &state, data.inputs(), args.samples, args.seed)?;
    for (pred, seed) in [(&point, None), (&bma, Some(args.seed))] {
        let metrics = evaluate(pred, data.labels(), seed)?;
        emit_line(&serde_json::to_string(&metrics).map_err(|e| Error::Format(e.to_string()))?)?;
    }
    Ok(0)
}

fn size(args: SizeArgs) -> Result<u8> {
    if !(args.params.is_finite() && args.params >= 1.0 && args.params.fract() == 0.0) {
        return Err(Error::Range(format!("--params must be a positive integer, got {}", args.params)));
    }
    let bytes = estimate_size(args.params as u64, args.rank, args.width)?;
    emit_line(&format!("{bytes} bytes ({:.3} GiB)", bytes as f64 / GIB))?;
    Ok(0)
}
