//! `smt` command line: saliency maps, patch selection, training,
//! evaluation, cost benchmarks, checkpoint inspection and dataset
//! generation.
//!
//! Exit codes: 0 on success, 1 for usage or input errors, 2 for internal
//! failures (numerical check failures, divergence). Diagnostics go to
//! standard error; machine-readable results are written under `--out`
//! together with `resolved_config.json`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use smt_core::SmtError;

pub use config::{apply_override, resolve};

#[derive(Debug)]
pub enum CliError {
    User(String),
    Core(SmtError),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Core(e) if e.is_user_error() => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<SmtError> for CliError {
    fn from(e: SmtError) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "smt", version, about = "Saliency-driven sparse-token vision transformer")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON config with model, train, saliency, selection and data sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` config override; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `train.seed` (and the generator seed of make-dataset).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Write the saliency map of an image as a 16-bit PNG plus JSON sidecar.
    Saliency {
        #[arg(long)]
        input: PathBuf,
    },
    /// Select the top-m patches of an image.
    Select {
        #[arg(long)]
        input: PathBuf,
        /// Patches to keep; defaults to the configured selection.
        #[arg(long)]
        m: Option<usize>,
        /// Patch side; defaults to `model.patch_size`.
        #[arg(long)]
        patch_size: Option<usize>,
        /// Also write an overlay PNG with non-selected patches dimmed.
        #[arg(long)]
        overlay: bool,
        /// Brightness factor for dimmed patches.
        #[arg(long, default_value_t = 0.25)]
        dim: f64,
    },
    /// Train a model; writes checkpoints, metrics.csv and epochs.csv.
    Train,
    /// Top-1 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Folder dataset; defaults to `data.eval`, then synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// FLOP, memory and runtime scaling over sequence lengths.
    Bench {
        /// Sequence lengths; defaults to 25, 50, 75 and 100% of the grid.
        #[arg(long, value_delimiter = ',')]
        s: Vec<usize>,
        /// Batch size of the analytic estimates.
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        element_bytes: u64,
        /// Batch size of the timed passes.
        #[arg(long, default_value_t = 8)]
        runtime_batch: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Only the analytic estimates.
        #[arg(long)]
        skip_runtime: bool,
    },
    /// Print a checkpoint header.
    Describe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate the synthetic shape dataset as a PNG folder.
    MakeDataset {
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Image side; defaults to `model.input_size`.
        #[arg(long)]
        size: Option<usize>,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let threads = if cli.global.deterministic { Some(1) } else { cli.global.threads };
    if threads == Some(0) {
        return Err(CliError::user("--threads must be positive"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::user(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::dispatch(cli))
}
