mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Learned image codec experiments: training, coding, evaluation and
/// backward-compatibility checks.
#[derive(Parser, Debug)]
#[command(name = "replaycodec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as PPM files plus a dataset manifest.
    GenData(GenData),
    /// Train a model from scratch.
    Pretrain(Pretrain),
    /// Fine-tune a checkpoint with one strategy.
    Finetune(Finetune),
    /// Compress one PPM image.
    Encode(Encode),
    /// Decompress one bitstream to PPM.
    Decode(Decode),
    /// Rate-distortion sweep over a λ grid.
    EvalRd(EvalRd),
    /// BD-rate of a test curve against an anchor curve.
    BdRate(BdRate),
    /// Decode archived bitstreams with an old and a new checkpoint.
    CheckCompat(CheckCompat),
    /// Full pipeline: pretrain, archive, fine-tune, evaluate, summarize.
    Scenario(Scenario),
}

#[derive(Args, Debug)]
pub struct Out {
    /// Run directory; created if needed.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenData {
    /// source_a or source_b.
    #[arg(long)]
    pub source: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset: `source_a:SEED:COUNT`, `source_b:SEED:COUNT`, a PPM
    /// directory or a dataset manifest file.
    #[arg(long)]
    pub data: String,
    /// Training config file; flags below override it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lambda_low: Option<f64>,
    #[arg(long)]
    pub lambda_high: Option<f64>,
}

#[derive(Args, Debug)]
pub struct Pretrain {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Model config file; overrides --preset.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// default, compact, tiny or micro.
    #[arg(long, default_value = "compact")]
    pub preset: String,
    /// parallel or sequential.
    #[arg(long)]
    pub arch: Option<String>,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct Finetune {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub base: PathBuf,
    /// ft_enc, ft_enc_dec or kr.
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Old training data replayed by kr.
    #[arg(long)]
    pub replay_data: Option<String>,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct Encode {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct Decode {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Decode even if the stream was written by a different entropy model.
    #[arg(long)]
    pub force_decode: bool,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct EvalRd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: String,
    /// Defaults to the model's training range.
    #[arg(long)]
    pub lambda_low: Option<f64>,
    #[arg(long)]
    pub lambda_high: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub points: usize,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct BdRate {
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckCompat {
    #[arg(long)]
    pub old: PathBuf,
    #[arg(long)]
    pub new: PathBuf,
    /// Directory of `.ccbs` streams.
    #[arg(long)]
    pub streams: PathBuf,
    /// Directory of PPM originals, matched to streams by file stem.
    #[arg(long)]
    pub originals: PathBuf,
    #[command(flatten)]
    pub out: Out,
}

#[derive(Args, Debug)]
pub struct Scenario {
    /// data_incremental, rate_inc_low_to_high or rate_inc_high_to_low.
    pub name: String,
    /// Scenario config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, starting at 0.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Extra kr runs, e.g. `0,0.25,0.5,0.75,1.0`.
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// parallel or sequential.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub pretrain_iterations: Option<usize>,
    #[arg(long)]
    pub finetune_iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Model preset: default, compact, tiny or micro.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub out: Out,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::EvalRd(a) => commands::eval_rd(a),
        Command::BdRate(a) => commands::bd_rate(a),
        Command::CheckCompat(a) => commands::check_compat(a),
        Command::Scenario(a) => commands::scenario(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: stage `{}` failed: {:#}", f.stage, f.error);
            ExitCode::FAILURE
        }
    }
}
