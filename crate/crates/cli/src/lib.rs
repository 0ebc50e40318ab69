//! The `phunet` command line: synthetic data generation, training,
//! correction and evaluation, each leaving a `run.json` manifest behind.

mod correct;
mod eval;
pub mod manifest;
mod synth;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phunet::Precision;

pub use eval::{Report, REPORT_FILE};
pub use manifest::{RunManifest, MANIFEST_FILE};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "phunet", version, about = "Bias-field correction of 2D slices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate biased/clean phantom pairs.
    Synth(SynthArgs),
    /// Train a model on a synthetic dataset.
    Train(TrainArgs),
    /// Correct slices with a trained model.
    Correct(CorrectArgs),
    /// Compute CV and SNR before and after correction.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of pairs.
    #[arg(long)]
    pub n: usize,
    /// Side length; a power of two >= 32.
    #[arg(long, value_parser = parse_size)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML training config; omitted fields keep the desk defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Total epochs, counting those already in a resumed checkpoint.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// A `.nii` or `.f32` volume, a directory of them, or a dataset directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Prior draws per slice; 0 writes the prior-mean correction only.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["pairs", "corrected"]))]
pub struct EvalArgs {
    /// Dataset directory. Alone, scores its references against its inputs;
    /// with --corrected, scores the corrected volumes against its inputs.
    #[arg(long, conflicts_with = "reference")]
    pub pairs: Option<PathBuf>,
    /// Directory of corrected volumes named by id.
    #[arg(long)]
    pub corrected: Option<PathBuf>,
    /// Directory of uncorrected volumes named by id.
    #[arg(long, requires = "corrected")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    let min = phunet::data::phantom::MIN_SIZE;
    if n < min || !n.is_power_of_two() {
        return Err(format!("{n} is not a power of two >= {min} (try 32, 64, 128 or 256)"));
    }
    Ok(n)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] phunet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use phunet::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                E::Config(_) | E::Contract(_) => EXIT_USAGE,
                E::NonFinite(_) | E::UndefinedMetric(_) => EXIT_NUMERIC,
                E::Dimension(_) | E::Parse { .. } | E::Unsupported { .. } | E::Path { .. } | E::Io(_) | E::Json(_) => {
                    EXIT_DATA
                }
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Runs a parsed command line. `argv` is recorded in the run manifest.
pub fn execute(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a, argv),
        Command::Train(a) => train::run(&a, argv),
        Command::Correct(a) => correct::run(&a, argv),
        Command::Eval(a) => eval::run(&a, argv),
    }
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
