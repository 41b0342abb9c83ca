//! The `gsc` command-line front end.
//!
//! Subcommands: `generate`, `fit`, `eval` and `bench`. Each writes its outputs
//! plus a `manifest.json` into an output directory. Exit codes: 0 success,
//! 1 usage or config error, 2 data error, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_config, BenchConfig, EvalConfig, FitConfig, GenerateConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Environment variable consulted when no thread count is configured.
pub const THREADS_ENV: &str = "GSC_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// A library error raised while checking configuration.
    pub fn config_from(e: crate::error::GscError) -> Self {
        CliError::config(e.to_string())
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn context(mut self, stage: &str) -> Self {
        self.message = format!("{stage}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "gsc", version, about = "Exact EM for Gaussian sparse coding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset from the GSC model or a Cauchy/Laplace sparse-coding model.
    Generate(WithConfig<GenerateConfig>),
    /// Fit a GSC model with multiple random restarts.
    Fit(WithConfig<FitConfig>),
    /// Score fitted runs: Amari index, orthogonality, run selection.
    Eval(WithConfig<EvalConfig>),
    /// Source-separation benchmark: mix sources, fit, evaluate.
    Bench(WithConfig<BenchConfig>),
}

#[derive(Debug, Args)]
pub struct WithConfig<T: Args> {
    /// JSON config file (or a manifest of an earlier run); flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: T,
}

fn layered<T>(cmd: WithConfig<T>, name: &str, overlay: fn(T, T) -> T) -> Result<T, CliError>
where
    T: Args + serde::de::DeserializeOwned + Default,
{
    let base = match &cmd.config {
        Some(path) => load_config(path, name)?,
        None => T::default(),
    };
    Ok(overlay(cmd.options, base))
}

fn init_threads(requested: Option<usize>) -> Result<(), CliError> {
    let threads = match requested {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::config(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    match threads {
        Some(0) => Err(CliError::config("threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {n} worker threads: {e}"))),
        None => Ok(()),
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Generate(c) => {
            let s = GenerateSettings::resolve(layered(c, "generate", GenerateConfig::overlay)?)?;
            init_threads(s.threads)?;
            cmd_generate(s)
        }
        Command::Fit(c) => {
            let s = FitSettings::resolve(layered(c, "fit", FitConfig::overlay)?)?;
            init_threads(s.threads)?;
            cmd_fit(s)
        }
        Command::Eval(c) => {
            let s = EvalSettings::resolve(layered(c, "eval", EvalConfig::overlay)?)?;
            init_threads(s.threads)?;
            cmd_eval(s)
        }
        Command::Bench(c) => {
            let s = BenchSettings::resolve(layered(c, "bench", BenchConfig::overlay)?)?;
            init_threads(s.threads)?;
            cmd_bench(s)
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
