//! `pvi`: preprocess, synthesize, train, evaluate, ablate, predict and benchmark.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "pvi", version, about = "Pedestrian trajectory prediction with vehicle interaction features")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Window raw scene records into train/val sequence files.
    Preprocess(PreprocessArgs),
    /// Generate synthetic scenes with vehicle-pedestrian coupling.
    Synth(SynthArgs),
    /// Train one model from a run configuration.
    Train(TrainArgs),
    /// Best-of-N ADE/FDE of a checkpoint on a sequence file.
    Eval(EvalArgs),
    /// Train and evaluate the SI/PVI ablation grid.
    Ablate(AblateArgs),
    /// Write observed, ground-truth and sampled trajectories as text.
    Predict(PredictArgs),
    /// Forward-pass latency per sequence.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Scene record file or directory of them.
    input: PathBuf,
    /// Output directory for train.seq, val.seq and summary.tsv.
    output: PathBuf,
    /// Ego pose file; scenes are then ego-local and get transformed.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    keep_every: usize,
    #[arg(long, default_value_t = 8)]
    t_obs: usize,
    #[arg(long, default_value_t = 12)]
    t_pred: usize,
    #[arg(long, default_value_t = 1)]
    skip: usize,
    /// Sensor range in meters (with --poses).
    #[arg(long, default_value_t = 75.0)]
    range: f64,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Run configuration; its [synth] table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene record file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Overrides synth.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides synth.repulsion_gain.
    #[arg(long)]
    gain: Option<f64>,
    /// Overrides synth.duration (seconds).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to $PVI_RUN_DIR/<model>-seed<seed>, else runs/<model>-seed<seed>.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Continue from <run-dir>/last.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model directory or run directory (its best/ is used).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma_scale: f64,
    /// Pick one sample per sequence instead of per pedestrian.
    #[arg(long)]
    per_sequence: bool,
    /// Append a row to this results table.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Model id for the report (defaults to the model label).
    #[arg(long)]
    model_id: Option<String>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence file.
    #[arg(long)]
    data: PathBuf,
    /// Only this sequence (0-based); all sequences otherwise.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout otherwise.
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
