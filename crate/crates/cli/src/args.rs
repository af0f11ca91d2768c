//! Command-line surface. Every tunable is an `Option` so that an absent
//! flag can fall through to the config file and then to the default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "MEMOIR_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "memoir",
    version,
    about = "Lifelong model editing with a sparse residual memory"
)]
pub struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Root seed; every random draw of the run derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Progress on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark as line-delimited records.
    GenData(GenDataArgs),
    /// Pre-train a backbone on a benchmark's corpus and save a checkpoint.
    Pretrain(PretrainArgs),
    /// Run an editing session over a benchmark's edit stream.
    Edit(EditArgs),
    /// Score an editor state (or the unedited backbone).
    Eval(EvalArgs),
    /// Sweep one configuration axis and tabulate the metrics.
    Ablate(AblateArgs),
    /// Summarize an editor state file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataArgs {
    #[arg(long)]
    pub facts: Option<usize>,
    #[arg(long)]
    pub rephrases: Option<usize>,
    /// Size of the centering corpus.
    #[arg(long)]
    pub irrelevant: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainArgs {
    #[arg(long, value_name = "PATH")]
    pub benchmark: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// FFN hidden width `D`.
    #[arg(long)]
    pub d_ffn: Option<usize>,
    /// `gelu` or `swiglu`.
    #[arg(long)]
    pub ffn: Option<String>,
    #[arg(long)]
    pub edit_layer: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditArgs {
    #[arg(long, value_name = "PATH")]
    pub backbone: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub benchmark: Option<PathBuf>,
    /// `memoir`, `dense-residual` or `exact-codebook`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Mask selection: `tophash`, `topk`, `hash` or `random`.
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Gradient steps per edit.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Use only the first N centering prompts.
    #[arg(long)]
    pub centering_n: Option<usize>,
    /// Route with the query's own mask instead of the database match.
    #[arg(long)]
    pub no_conditional_activation: bool,
    /// Write a state snapshot every N edits; 0 disables.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Stop after this many edits in total.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Continue from a saved state instead of starting fresh.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub backbone: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub benchmark: Option<PathBuf>,
    /// Editor state; without it the unedited backbone is scored.
    #[arg(long, value_name = "PATH")]
    pub state: Option<PathBuf>,
    /// Evaluate the first N edits; defaults to all applied edits.
    #[arg(long)]
    pub up_to: Option<usize>,
    /// Edits per reliability window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Override the routing threshold at inference.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub no_conditional_activation: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateArgs {
    #[arg(long, value_name = "PATH")]
    pub backbone: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub benchmark: Option<PathBuf>,
    /// `k`, `tau`, `strategy`, `centering_n` or `conditional_activation`.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated axis values, e.g. `8,64,256`.
    #[arg(long)]
    pub values: Option<String>,
    /// Edits per session.
    #[arg(long)]
    pub edits: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub state: PathBuf,
    /// Print one JSON object instead of `key: value` lines.
    #[arg(long)]
    pub json: bool,
}
