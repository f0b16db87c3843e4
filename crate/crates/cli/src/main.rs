//! `condmon`: data preparation, training, evaluation, latency benchmarking
//! and monitor simulation.

mod commands;
mod config;
mod docs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "condmon", version, about = "Learn action preconditions and effects, and monitor skill execution")]
pub struct Cli {
    /// TOML config file; a run snapshot (`run.toml`) is also accepted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable; flags win over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent directory of timestamped run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Split a manifest into train/val files and optionally precompute features.
    Prepare(PrepareArgs),
    /// Train a model and write checkpoints and the training record.
    Train(TrainArgs),
    /// Evaluate a checkpoint on phase prediction and anomaly detection.
    Eval(EvalArgs),
    /// Run the behavior-tree monitor on a scenario script in closed loop.
    MonitorSim(MonitorArgs),
    /// Generate a toy corpus of successful and failed demonstrations.
    Synth(SynthArgs),
    /// Write the flag and config-key reference page.
    Docs(DocsArgs),
    /// Re-run the command recorded in a run directory's snapshot.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrepareArgs {
    /// Demonstration manifest (JSON Lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also encode every frame into feature files with the configured encoder.
    #[arg(long)]
    pub features: bool,
    /// Split seed; overrides `split.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    NoStateTransformer,
    NoConditionTransformer,
    NoConsistency,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Demonstration manifest (JSON Lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file from `prepare`; without it the configured split is drawn.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Model variant; overrides `net.variant` and `train.use_consistency`.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Peak learning rate; overrides `train.peak_lr`.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Paraphrase bank; defaults to `paraphrases.json` beside the manifest when present.
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    /// Train on the canonical descriptions only.
    #[arg(long)]
    pub no_paraphrase: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; not needed with `--oracle`.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Demonstration manifest (JSON Lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Evaluate the validation ids of this split file instead of the whole manifest.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Use ground-truth labels as predictions.
    #[arg(long)]
    pub oracle: bool,
    /// Query with paraphrased descriptions from this bank.
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    /// Also measure inference latency.
    #[arg(long)]
    pub bench: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MonitorArgs {
    /// Scenario script (JSON).
    #[arg(long)]
    pub script: PathBuf,
    /// Tree file; defaults to a sequence over the script's actions.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Checkpoint whose model predicts phases; not needed with `--oracle`.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Feed the world's ground truth as predictions instead of running a model.
    #[arg(long)]
    pub oracle: bool,
    /// Rendering noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many frames.
    #[arg(long, default_value_t = 5000)]
    pub max_frames: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory; defaults to `corpus` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Successful demonstrations; overrides `corpus.successes`.
    #[arg(long)]
    pub successes: Option<usize>,
    /// Failed demonstrations; overrides `corpus.failures`.
    #[arg(long)]
    pub failures: Option<usize>,
    /// Overrides `corpus.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DocsArgs {
    /// Output path.
    #[arg(long, default_value = "docs/cli.md")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Run directory containing `run.toml`.
    pub run_dir: PathBuf,
}

/// Exit status for a failed command: 3 for numeric failures, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<condmon::Error>(), Some(condmon::Error::Numeric(_))));
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
