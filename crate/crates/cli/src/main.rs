//! `specdeceive`: dataset generation, classifier and AMN training, evaluation
//! sweeps and PSD export.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specdeceive_core::adversary::{DeceptionKind, SpectralMode};
use specdeceive_core::Scheme;

use crate::error::CliError;

pub const SEED_ENV: &str = "SPECDECEIVE_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "specdeceive",
    version,
    about = "Spectrally deceptive adversarial perturbations for I/Q signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate noiseless modulated frames with their bits and a manifest.
    GenData(GenDataArgs),
    /// Train the eavesdropper classifier on all five schemes.
    TrainAmc(TrainAmcArgs),
    /// Train an adversarial mutation network against a frozen classifier.
    TrainAmn(TrainAmnArgs),
    /// Sweep BER and eavesdropper accuracy over an SNR grid.
    Eval(EvalArgs),
    /// Export clean, perturbation and adversarial PSD traces.
    Psd(PsdArgs),
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse()
        .map_err(|e: specdeceive_core::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<DeceptionKind, String> {
    s.parse()
        .map_err(|e: specdeceive_core::Error| e.to_string())
}

/// Options shared by the training commands; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct TrainCommon {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; falls back to the config file, then $SPECDECEIVE_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub frames_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub snr_min: Option<f64>,
    #[arg(long)]
    pub snr_max: Option<f64>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch CSV log to write.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Scheme,
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's dataset_dir, then `data`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainAmcArgs {
    #[command(flatten)]
    pub common: TrainCommon,
}

#[derive(Args, Debug)]
pub struct TrainAmnArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Classifier checkpoint; defaults to `<checkpoint_dir>/amc.ckpt`.
    #[arg(long)]
    pub amc: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    /// Third loss term: power, mse-fft or huber-fft.
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<DeceptionKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Huber threshold.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Compare complex spectra instead of magnitudes.
    #[arg(long)]
    pub complex_spectrum: bool,
    /// Let the eavesdropper see the adversarial frame without its own noise.
    #[arg(long)]
    pub noiseless_eavesdropper: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub amn: PathBuf,
    #[arg(long)]
    pub amc: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 2.0)]
    pub snr_step: f64,
    /// Report CSV; metadata goes to the same path with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames per SNR point; defaults to max(1000, 10^5 bits).
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PsdArgs {
    #[arg(long)]
    pub amn: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainAmnArgs {
    fn spectral_mode(&self) -> Option<SpectralMode> {
        self.complex_spectrum.then_some(SpectralMode::Complex)
    }
}

/// Flag, then config file, then `$SPECDECEIVE_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Validation(format!("{SEED_ENV}={v} is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::TrainAmc(a) => commands::train_amc(&a),
        Command::TrainAmn(a) => {
            let mode = a.spectral_mode();
            commands::train_amn(&a, mode)
        }
        Command::Eval(a) => commands::eval(&a),
        Command::Psd(a) => commands::psd(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
