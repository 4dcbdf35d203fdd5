//! `tumorlens` command-line interface.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "tumorlens",
    version,
    about = "Disentangled cross-domain drug response prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Training config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed override. For `synth` it seeds the generator.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory. Default inputs are looked up here as well.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Overrides one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Locations of the dataset and checkpoint to read.
#[derive(Args, Debug, Clone)]
pub struct Inputs {
    /// Dataset directory [default: OUT/data].
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainArg {
    Source,
    Target,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreArg {
    /// Combined CanCell and TME score.
    Combined,
    /// CanCell score alone.
    Cancell,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with known factors into OUT/data.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset directory [default: OUT/data].
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        n_source: Option<usize>,
        #[arg(long)]
        n_target: Option<usize>,
        #[arg(long)]
        n_features: Option<usize>,
        #[arg(long)]
        n_drugs: Option<usize>,
    },
    /// Train stage 1 and write OUT/stage1.ckpt.
    Train1 {
        #[command(flatten)]
        common: Common,
        /// Dataset directory [default: OUT/data].
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Fit the TME head on labeled tumors and write OUT/stage2.ckpt.
    Train2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Score every tumor (or cell line) against every drug.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "target")]
        domain: DomainArg,
    },
    /// Write CanCell and TME logits for the labeled tumor pairs.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Refit stage 2 across label fractions and report held-out metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated fractions of labeled tumors.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1,0.2,0.3")]
        fractions: Vec<f64>,
    },
    /// Write latent factors and a 2-D projection to OUT/embeddings.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Evaluate on the tumors held out from stage-2 training.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Score to rank by [default: combined for stage 2, cancell for stage 1].
        #[arg(long, value_enum)]
        score: Option<ScoreArg>,
        /// Evaluate on every labeled tumor pair instead of the held-out part.
        #[arg(long)]
        all: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
