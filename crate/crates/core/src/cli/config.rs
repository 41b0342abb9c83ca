//! Subcommand configurations.
//!
//! Every option can come from a JSON file (`--config`) or from the command
//! line; the command line wins. JSON keys are the long flag names with `-`
//! replaced by `_`, and unknown keys are rejected. A manifest written by an
//! earlier run is also accepted as a config file: its `config` snapshot is
//! used.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CliError;

macro_rules! layered_config {
    (
        $(#[$meta:meta])*
        $name:ident {
            $( $(#[$fmeta:meta])* $field:ident : $ty:ty ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $( $(#[$fmeta])* pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Fills every unset field from `base`.
            pub fn overlay(self, base: Self) -> Self {
                $name { $( $field: self.$field.or(base.$field), )* }
            }
        }
    };
}

layered_config! {
    GenerateConfig {
        /// Generative model: gsc, cauchy-sc or laplace-sc.
        #[arg(long)]
        model: String,
        /// Observed dimension D.
        #[arg(long)]
        dim: usize,
        /// Hidden dimension H (defaults to D; must equal D for the sparse-coding models).
        #[arg(long)]
        hidden: usize,
        /// Number of data points.
        #[arg(long)]
        n: usize,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Noise standard deviation of the sparse-coding models.
        #[arg(long)]
        noise_sigma: f64,
        /// GSC parameter file to sample from instead of drawing random parameters.
        #[arg(long)]
        params: PathBuf,
        /// Worker threads (falls back to GSC_THREADS).
        #[arg(long)]
        threads: usize,
    }
}

layered_config! {
    FitConfig {
        /// Dataset CSV (rows are data points).
        #[arg(long)]
        data: PathBuf,
        /// The dataset CSV starts with a header row.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        header: bool,
        /// Hidden dimension H.
        #[arg(long)]
        hidden: usize,
        /// Number of independent restarts.
        #[arg(long)]
        restarts: usize,
        /// EM iterations per run.
        #[arg(long)]
        max_iters: usize,
        /// Relative log-likelihood gain below which a run stops early.
        #[arg(long)]
        rel_tol: f64,
        /// Constrain Sigma to a multiple of the identity.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        isotropic: bool,
        /// Learn pi (when false it keeps its initial value).
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        update_pi: bool,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (falls back to GSC_THREADS).
        #[arg(long)]
        threads: usize,
    }
}

layered_config! {
    EvalConfig {
        /// Directory written by `gsc fit`.
        #[arg(long)]
        results: PathBuf,
        /// JSON file whose `W` entry is the ground-truth mixing matrix.
        #[arg(long)]
        truth: PathBuf,
        /// Orthogonality histogram bin width in degrees.
        #[arg(long)]
        bin_width: f64,
        /// Dataset label used in the table.
        #[arg(long)]
        name: String,
        /// Output directory (defaults to `eval` inside the results directory).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (falls back to GSC_THREADS).
        #[arg(long)]
        threads: usize,
    }
}

layered_config! {
    BenchConfig {
        /// Sources CSV (rows are samples, columns are sources); the bundled set when omitted.
        #[arg(long)]
        sources: PathBuf,
        /// The sources CSV starts with a header row.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        header: bool,
        /// Standardize every source column before mixing.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        standardize: bool,
        /// Window lengths to benchmark, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// First sample of every window.
        #[arg(long)]
        offset: usize,
        /// Restarts per window length.
        #[arg(long)]
        restarts: usize,
        /// EM iterations per run.
        #[arg(long)]
        max_iters: usize,
        /// Relative log-likelihood gain below which a run stops early.
        #[arg(long)]
        rel_tol: f64,
        /// Use the identity instead of a random orthogonal mixing (debugging aid).
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        identity_mix: bool,
        /// Orthogonality histogram bin width in degrees.
        #[arg(long)]
        bin_width: f64,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Dataset label used in the table.
        #[arg(long)]
        name: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (falls back to GSC_THREADS).
        #[arg(long)]
        threads: usize,
    }
}

/// Reads a config file, or the config snapshot of a manifest for `command`.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let value = match manifest_snapshot(&value) {
        Some((cmd, snapshot)) => {
            if cmd != command {
                return Err(CliError::config(format!(
                    "{} is a manifest of `{cmd}`, not `{command}`",
                    path.display()
                )));
            }
            snapshot.clone()
        }
        None => value,
    };
    serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn manifest_snapshot(value: &serde_json::Value) -> Option<(&str, &serde_json::Value)> {
    let obj = value.as_object()?;
    let cmd = obj.get("command")?.as_str()?;
    Some((cmd, obj.get("config")?))
}
