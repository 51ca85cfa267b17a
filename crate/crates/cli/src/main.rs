//! `scorelab`: schedules, noise traces, training, sampling, evaluation and the oracle battery.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 failed checks,
//! 1 anything else.

mod commands;
mod manifest;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scorelab::Error;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Lib(Error),
    ChecksFailed(usize),
    Io(std::io::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::ChecksFailed(_) => 4,
            Failure::Io(_) => 1,
            Failure::Lib(e) => match e {
                Error::Divergence { .. } | Error::TrainingDiverged { .. } | Error::NonFiniteGradient { .. } => 3,
                Error::InvalidSchedule(_)
                | Error::StepTooLarge { .. }
                | Error::StepTooSmall { .. }
                | Error::InvalidMixture(_)
                | Error::InvalidArgument(_)
                | Error::InvalidSize(_)
                | Error::InvalidConfig(_)
                | Error::SigmaNotInSchedule(_)
                | Error::DimensionMismatch { .. }
                | Error::InsufficientData { .. }
                | Error::EmptyInput(_)
                | Error::Parse(_)
                | Error::Json(_) => 2,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
            Failure::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

#[derive(Parser)]
#[command(name = "scorelab", version, about = "Score-based generative sampling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a geometric noise schedule as JSON.
    Schedule(ScheduleArgs),
    /// Idealised ALS and CAS noise traces under the optimal score for Dirac data.
    Trace(TraceArgs),
    /// Generate a synthetic dataset as CSV.
    Data(DataArgs),
    /// Train a score network with denoising score matching, optionally adversarially.
    Train(TrainArgs),
    /// Draw samples with ALS or CAS from a checkpoint or an analytic score.
    Sample(SampleArgs),
    /// Mode coverage, mode-histogram KL and distances for a sample file.
    Eval(EvalArgs),
    /// Run the oracle battery.
    Check(CheckArgs),
}

#[derive(Args)]
pub struct Common {
    /// JSON config file (or a manifest written by an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long = "sigmaL")]
    pub sigma_l: Option<f64>,
    #[arg(long = "L")]
    pub levels: Option<usize>,
}

#[derive(Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long = "sigmaL")]
    pub sigma_l: Option<f64>,
    #[arg(long = "L")]
    pub levels: Option<usize>,
    /// Step sizes eta = epsilon / sigma_L^2, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eta: Option<Vec<f64>>,
    /// Updates per level, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub nsigma: Option<Vec<usize>>,
    /// Starting noise level; defaults to sigma_1 / gamma.
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
    /// grid25, swiss-roll or dirac.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Train on points from a CSV file instead of a generated dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long = "sigmaL")]
    pub sigma_l: Option<f64>,
    #[arg(long = "L")]
    pub levels: Option<usize>,
    /// unconditional or conditional.
    #[arg(long)]
    pub conditioning: Option<String>,
    /// Adversarial training with default hybrid settings.
    #[arg(long)]
    pub hybrid: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub n_d: Option<usize>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Score checkpoint to sample from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// als or cas.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub nsigma: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// pure-noise or data-plus-noise.
    #[arg(long)]
    pub init: Option<String>,
    /// Points for data-plus-noise initialisation.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub no_denoise: bool,
    /// Record every k-th update of the first chains to trajectory.csv.
    #[arg(long)]
    pub trajectory_every: Option<usize>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Samples to evaluate.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Reference points for the energy distance; drawn from the grid otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Assignment radius; defaults to 3 tau.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Monte Carlo chains per sampler check.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Multiply the consistent noise factor by this amount; every CAS check should then fail.
    #[arg(long)]
    pub corrupt_beta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Schedule(a) => commands::schedule(a),
        Command::Trace(a) => commands::trace(a),
        Command::Data(a) => commands::data(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Check(a) => commands::check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scorelab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
