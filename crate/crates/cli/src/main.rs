//! `skinmamba`: train, evaluate, predict, ablate and inspect.
//!
//! Exit status is 0 on success, 1 when some work failed, and 2 for usage
//! or environment problems (bad flags or keys, missing paths, locked run
//! directories).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "skinmamba",
    version,
    about = "Skin lesion segmentation with a hybrid convolution / state-space network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration source and overrides shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, by dotted path or unique leaf name. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set train.deterministic=true`.
    #[arg(long)]
    pub deterministic: bool,
    /// Shorthand for `--set train.epochs=N`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `runs/<dataset name>`.
        #[arg(long, value_name = "PATH")]
        run_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on a split of its dataset.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
        /// Also write the JSON report here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Write a 0/255 mask and an overlay for every image in a directory.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long = "images", value_name = "DIR")]
        image_dir: PathBuf,
        #[arg(long = "out", value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Train the module-toggle and token-mixer grid and tabulate the results.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `runs/<dataset name>-ablation`.
        #[arg(long, value_name = "PATH")]
        run_dir: Option<PathBuf>,
    },
    /// Print the resolved configuration, parameter count and stage shapes,
    /// or summarize a checkpoint.
    Inspect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Skip the traced forward pass.
        #[arg(long)]
        no_trace: bool,
    },
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| c.downcast_ref::<skinmamba::Error>().is_some_and(skinmamba::Error::is_usage));
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { cfg, run_dir } => commands::train(&cfg, run_dir),
        Command::Evaluate { cfg, checkpoint, split, out } => commands::evaluate(&cfg, &checkpoint, split, out),
        Command::Predict { checkpoint, image_dir, out_dir } => commands::predict(&checkpoint, &image_dir, &out_dir),
        Command::Ablate { cfg, run_dir } => commands::ablate(&cfg, run_dir),
        Command::Inspect { cfg, checkpoint, no_trace } => commands::inspect(&cfg, checkpoint, no_trace),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
