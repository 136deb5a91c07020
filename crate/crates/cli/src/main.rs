//! `sigstrength` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or usage, 3 transport failure,
//! 4 internal or output failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use sigstrength::security::Mode;

use crate::commands::{AnalyzeArgs, Context};
use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: sigstrength::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] sigstrength::Error),
}

impl CliError {
    fn output(path: &Path, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        use sigstrength::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Input { .. } => 2,
            CliError::Output { .. } => 4,
            CliError::Core(e) => match e {
                E::Transport(_) | E::Protocol(_) => 3,
                E::Io(_) => 4,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sigstrength", version, about = "Signal-injection simulation and security thresholds for ADC front ends")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Threshold convention: eq5_with_q or strict_pseudocode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Digitize the configured injection and write the trace and its spectrum.
    Simulate,

    /// Critical thresholds of a set of captures (reference first).
    Analyze {
        /// Trace files, CSV or WAV; at least two.
        traces: Vec<PathBuf>,

        /// Ideal waveform to score: sine, exp_sine or zero. Repeatable.
        #[arg(long = "ideal")]
        ideals: Vec<String>,

        /// Ideal frequency in Hz; defaults to the configured tone.
        #[arg(long)]
        freq: Option<f64>,

        /// Number of estimation traces after the reference.
        #[arg(long)]
        estimation: Option<usize>,

        /// Quantization bound in volts; defaults to the configured ADC, else 0.
        #[arg(long)]
        q: Option<f64>,
    },

    /// Similarity of a measured trace to an ideal.
    Similarity {
        measured: PathBuf,

        /// Ideal trace file.
        ideal_file: Option<PathBuf>,

        /// Synthesized ideal when no file is given: sine, exp_sine or zero.
        #[arg(long = "ideal")]
        ideal_kind: Option<String>,

        #[arg(long)]
        freq: Option<f64>,
    },

    /// Grid of (carrier, power, depth) injections.
    Sweep {
        /// Capture from a bench server instead of simulating in process.
        #[arg(long)]
        remote: Option<String>,

        /// Per-request timeout in milliseconds for remote captures.
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },

    /// Serve simulated captures over the line protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:5025")]
        bind: String,
    },
}

fn context(common: &Common) -> Result<Context, CliError> {
    let config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.or(config.seed).unwrap_or(0);
    let mode = common.mode.or(config.mode).unwrap_or_default();
    let out = common
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Context {
        config,
        seed,
        mode,
        out,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli.common)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Analyze {
            traces,
            ideals,
            freq,
            estimation,
            q,
        } => commands::analyze(
            &ctx,
            &AnalyzeArgs {
                traces,
                ideals,
                freq,
                estimation,
                q,
            },
        )
        .map(drop),
        Command::Similarity {
            measured,
            ideal_file,
            ideal_kind,
            freq,
        } => commands::similarity_cmd(&ctx, &measured, ideal_file.as_deref(), ideal_kind.as_deref(), freq)
            .map(drop),
        Command::Sweep { remote, timeout_ms } => {
            commands::sweep(&ctx, remote.as_deref(), Duration::from_millis(timeout_ms))
        }
        Command::Serve { bind } => commands::serve_cmd(&ctx, &bind),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
