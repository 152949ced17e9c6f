mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "sonarfield", version, about = "Synthetic ultrasonic gesture sensing: generate, train, evaluate, replay")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a dataset plan into session recordings plus a manifest.
    Gen(GenArgs),
    /// Train a gesture model on a generated dataset.
    Train(TrainArgs),
    /// Run an evaluation experiment and write a JSON report.
    Eval(EvalArgs),
    /// Replay one recorded session through the recognizer.
    Stream(StreamArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Plan file (JSON).
    #[arg(long)]
    pub plan: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset seed; falls back to SONARFIELD_SEED, then 0.
    #[arg(long, env = "SONARFIELD_SEED")]
    pub seed: Option<u64>,
}

/// Sensor selection shared by train and eval.
#[derive(Debug, Args, Serialize, Clone)]
pub struct SensorArgs {
    /// Comma list of mic_right, mic_band, imu, or the aliases `full` and
    /// `audio`. A list of microphones keeps the IMU unless --no-imu is given.
    #[arg(long)]
    pub sensors: Option<String>,
    /// Drop the IMU features.
    #[arg(long)]
    pub no_imu: bool,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sensors: SensorArgs,
    /// Only train on these gestures (comma list).
    #[arg(long)]
    pub gestures: Option<String>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Training seed; falls back to SONARFIELD_SEED, then 0.
    #[arg(long, env = "SONARFIELD_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Kfold,
    Subset,
    Ablate,
    Noise,
    Distance,
    Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldModeArg {
    Session,
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandArg {
    #[value(name = "below_16500")]
    Below16500,
    #[value(name = "full_band")]
    FullBand,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trained model; supplies feature layout and hyperparameters, and the
    /// weights for the latency and distance experiments.
    #[arg(long, conflicts_with = "retrain")]
    pub model: Option<PathBuf>,
    /// Train from the hyperparameter flags instead of using a model.
    #[arg(long)]
    pub retrain: bool,
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = FoldModeArg::Session)]
    pub fold_mode: FoldModeArg,
    #[command(flatten)]
    pub sensors: SensorArgs,
    /// Subsets for `subset`: preset names or comma lists of gestures,
    /// separated by `;`. Defaults to the four presets.
    #[arg(long)]
    pub subset: Option<String>,
    /// Noise levels in dB for `noise`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = BandArg::Both)]
    pub band: BandArg,
    /// Reflector distances in metres for `distance`.
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    /// Fresh test sessions per gesture and distance.
    #[arg(long, default_value_t = 5)]
    pub test_sessions: usize,
    /// Grid windows timed per session for `latency`.
    #[arg(long, default_value_t = 200)]
    pub windows: usize,
    /// Sessions timed for `latency`.
    #[arg(long, default_value_t = 12)]
    pub latency_sessions: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Report output path (JSON). CSV and SVG companions are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Fold and training seed; falls back to SONARFIELD_SEED, then 0.
    #[arg(long, env = "SONARFIELD_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct StreamArgs {
    /// Session directory (audio.wav, imu.csv, labels.jsonl, session.json).
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Model for indirect gestures, consulted while Wrist Up is held.
    #[arg(long)]
    pub indirect_model: Option<PathBuf>,
    /// Pace the replay to the stream clock.
    #[arg(long)]
    pub realtime: bool,
    #[arg(long, default_value_t = 16)]
    pub queue: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mode = if cli.sequential {
        sonarfield::Parallelism::Sequential
    } else {
        sonarfield::Parallelism::Rayon
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a, mode),
        Command::Eval(a) => commands::eval(a, mode),
        Command::Stream(a) => commands::stream(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
