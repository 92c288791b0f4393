//! Command-line driver for the full experiment loop.
//!
//! Every subcommand reads one TOML run configuration (`--config`, defaults
//! when omitted) patched by `--set key.path=value` overrides, and owns its
//! output directory for the duration of the run through a `.lock` file.
//! Exit status is 0 on success, 1 on usage errors and 2 on data errors.

mod commands;
mod config;
mod shard;

pub use config::{apply_override, EnsembleConfig, RunConfig};
pub use shard::{DatasetShard, Dtype, FieldSpec, ShardConfidence, ShardError, ShardHeader, SHARD_FORMAT};

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    std::io::Error,
    serde_json::Error,
    csv::Error,
    crate::signal::SignalError,
    crate::signal::WavError,
    crate::pipeline::PipelineError,
    crate::separation::SeparationError,
    crate::metrics::MetricsError,
    crate::mixgen::MixgenError,
    crate::dcnet::DcError,
    crate::ensemble::EnsembleError,
    crate::experiment::ExperimentError,
    ShardError,
);

#[derive(Debug, Parser)]
#[command(name = "stereoboot", version, about = "Bootstrap single-channel separation from stereo spatial clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set training.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing and locked while running.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Spatial,
    GroundTruth,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stereo corpus: `manifest.jsonl` plus float WAVs
    /// `<split>/<id>.mix.wav` and `<split>/<id>.s<j>.wav`.
    Mixgen {
        #[command(flatten)]
        common: Common,
    },
    /// Spatially separate one stereo WAV (`--input`) into `stem<j>.wav` and
    /// `confidence.json`, or a corpus split (`--corpus`) into
    /// `<id>.s<j>.wav` and `confidence.csv`
    /// (columns: mixture_id, c_cluster, c_jsd, mean_confidence).
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write one `<id>.shard` per mixture of a corpus split with labels and
    /// weights from the spatial separator (confidence exponent `alpha`) or
    /// from the ground truth.
    Pseudolabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "spatial")]
        labels: LabelArg,
    },
    /// Train the embedding network on shard directories, writing `model.ckpt`
    /// and `loss_curve.csv` (columns: epoch, train_loss, val_loss, lr).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shards: PathBuf,
        #[arg(long)]
        validation: PathBuf,
    },
    /// Separate one WAV (`--input`, downmixed if stereo) into `stem<j>.wav`,
    /// or a corpus split (`--corpus`) into `<id>.s<j>.wav`.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 2)]
        sources: usize,
    },
    /// Score `<id>.s<j>.wav` estimates against corpus references into
    /// `scores.csv` (columns: mixture_id, estimate, reference, si_sdr,
    /// si_sir, si_sar), or summarise shards into `quality.json`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "corpus", conflicts_with = "shards", required_unless_present = "shards")]
        estimates: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        shards: Option<PathBuf>,
    },
    /// Run the spatial separator and the network over a corpus split and
    /// combine them with the configured policy into `ensemble.csv`
    /// (columns: mixture_id, mean_confidence, spatial_si_sdr, dc_si_sdr,
    /// choice, ensemble_si_sdr) and `summary.json`.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Confidence against spatial SI-SDR over a corpus split:
    /// `confidence_sdr.csv` (columns: mixture_id, mean_confidence,
    /// log10_confidence, si_sdr) and `summary.json` with the correlation.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Mixgen { common }
            | Command::Separate { common, .. }
            | Command::Pseudolabel { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ensemble { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

/// Exclusive ownership of an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Data(format!("{} is locked by another run ({})", dir.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    let _lock = OutputLock::acquire(&common.out)?;
    commands::dispatch(&cli.command, &config, &common.out)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stereoboot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
