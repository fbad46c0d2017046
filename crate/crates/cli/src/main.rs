mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sfa_core::SfaError;

#[derive(Parser, Debug)]
#[command(name = "sfa", version, about = "Point cloud completion with separated feature aggregation")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(GenDataArgs),
    /// Train a completion network.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a baseline) on a dataset split.
    Eval(EvalArgs),
    /// Complete a single point cloud file.
    Complete(CompleteArgs),
    /// Sweep the level number or the known:missing ratio.
    Ablate(AblateArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Points per partial view.
    #[arg(long)]
    pub n: Option<usize>,
    /// Points per complete cloud.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ascii or binary.
    #[arg(long)]
    pub format: Option<String>,
}

/// Options shared by `train` and `ablate`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct TrainOpts {
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// full (r=8, t=2, u=2) or desk (r=4, t=1, u=2, 2000 iterations, decay every 800).
    #[arg(long)]
    pub preset: Option<String>,
    /// glfa, rfa or nwosfa.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Stop after this many updates.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub u: Option<usize>,
    /// Known:missing copy ratio, e.g. 1:1.
    #[arg(long)]
    pub ratio: Option<String>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// Input points per cloud; defaults to the dataset's partial size.
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Comma-separated iterations at which to keep snapshots.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<u64>>,
    /// Disable gradient clipping.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_clip: bool,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// oracle or tiled-partial instead of a checkpoint.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Tiling factor for the tiled-partial baseline when no checkpoint is given.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub fidelity: bool,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub mmd: bool,
    #[arg(long)]
    pub reference_dir: Option<PathBuf>,
    /// Write every Y_final under `<out>/outputs`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub save_outputs: bool,
    /// Load the checkpoint even if its config hash differs.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub force: bool,
    /// Row label in the text table.
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write colored known/missing, attention and FPS files.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub export_parts: bool,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub force: bool,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct AblateArgs {
    /// level_number or ratio.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated values, e.g. 2,3,4,5 or 4:0,3:1,2:2.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

fn exit_code(e: &SfaError) -> u8 {
    match e {
        SfaError::Config(_) | SfaError::Domain(_) | SfaError::Size(_) => 2,
        SfaError::Io { .. } | SfaError::Parse { .. } => 3,
        SfaError::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::set_workers().and_then(|_| match &cli.command {
        Command::GenData(a) => commands::gen_data(a, cli.config.as_deref()),
        Command::Train(a) => commands::train(a, cli.config.as_deref()),
        Command::Eval(a) => commands::eval(a, cli.config.as_deref()),
        Command::Complete(a) => commands::complete(a, cli.config.as_deref()),
        Command::Ablate(a) => commands::ablate(a, cli.config.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfa: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
