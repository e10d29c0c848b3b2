//! Command-line front door for latent-space semantic controls.
//!
//! Pipeline: `synth` builds the world and latent bank, `train` fits one
//! scoring network per attribute, `edit` follows (masked) gradient
//! directions until the target boundary is crossed, `sweep` repeats
//! edits over a grid of exclusion counts, and `eval` turns trajectory
//! sets into accuracy and attribute-dependency metrics.
//!
//! Exit codes: 0 success / boundary crossed, 2 usage, 3 data or format,
//! 4 numeric (divergence, vanishing gradient, degenerate normalizer),
//! 5 edit stopped by max_steps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentctl::control::MaskMode;

#[derive(Parser)]
#[command(name = "latentctl", version, about = "Gradient-based semantic latent controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment config; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default "out").
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of latents to sample into the bank.
    #[arg(long)]
    bank_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// World file (default <out-dir>/world.json).
    #[arg(long)]
    world: Option<PathBuf>,
    /// Bank file (default <out-dir>/bank.gclb).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Attributes to train (default: all in the bank).
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    /// Labeled examples per class taken from the bank.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden_width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Directory of .gclf classifier files (default <out-dir>/classifiers).
    #[arg(long)]
    clf_dir: Option<PathBuf>,
    /// Attribute to edit.
    #[arg(long)]
    target: Option<String>,
    /// Class to drive toward (multi-class targets).
    #[arg(long)]
    target_class: Option<usize>,
    /// Entangled attributes to mask out, as attr:count (comma separable).
    #[arg(long)]
    exclude: Option<Vec<String>>,
    /// Signed step size; the sign picks the direction of change.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Step along the raw (unnormalized) gradient.
    #[arg(long)]
    no_normalize: bool,
    /// Keep stepping after the boundary is crossed.
    #[arg(long)]
    no_stop_on_boundary: bool,
    /// Editable dimensions, e.g. "0-63,128-191".
    #[arg(long)]
    dim_mask: Option<String>,
    /// refresh: recompute exclusions per step; frozen: once at start.
    #[arg(long, value_enum)]
    mask_mode: Option<CliMaskMode>,
    /// Edit the latent at this bank index.
    #[arg(long)]
    bank_index: Option<usize>,
    /// Edit a latent read from a JSON array file.
    #[arg(long)]
    z_file: Option<PathBuf>,
    /// Batch mode: edit this many boundary-sampled latents.
    #[arg(long)]
    boundary_count: Option<usize>,
    /// Boundary sampling margin (default 0.5).
    #[arg(long)]
    margin: Option<f64>,
    /// Flip alpha's sign so the edit pushes the target across zero.
    #[arg(long)]
    auto_sign: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    edit: EditArgs,
    /// Exclusion counts to sweep (default 0,50,100,150,200,250).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Trajectory directory; subdirectories become comparison groups.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Measured attribute set (default: all world attributes).
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    /// Explicit attribute-dependency bin edges.
    #[arg(long, value_delimiter = ',')]
    bin_edges: Option<Vec<f64>>,
    /// Emit start/end scatter for this x attribute...
    #[arg(long)]
    scatter_x: Option<String>,
    /// ...against this y attribute.
    #[arg(long)]
    scatter_y: Option<String>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum CliMaskMode {
    Refresh,
    Frozen,
}

impl From<CliMaskMode> for MaskMode {
    fn from(mode: CliMaskMode) -> Self {
        match mode {
            CliMaskMode::Refresh => MaskMode::Refresh,
            CliMaskMode::Frozen => MaskMode::Frozen,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the default world and a labeled latent bank.
    Synth(SynthArgs),
    /// Train one scoring network per attribute from bank examples.
    Train(TrainArgs),
    /// Follow a (masked) gradient direction from a latent code.
    Edit(EditArgs),
    /// Run edits over a grid of exclusion counts.
    Sweep(SweepArgs),
    /// Compute accuracy and attribute-dependency metrics.
    Eval(EvalArgs),
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    use latentctl::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. })
        | Some(Error::VanishingGradient { .. })
        | Some(Error::DegenerateNormalizer { .. })
        | Some(Error::NonFinite(_)) => commands::EXIT_NUMERIC,
        Some(Error::InvalidArgument(_))
        | Some(Error::UnknownAttribute(_))
        | Some(Error::CountOutOfRange { .. })
        | Some(Error::IndexOutOfRange { .. }) => commands::EXIT_USAGE,
        Some(_) => commands::EXIT_DATA,
        // Context-wrapped IO/parse problems are data errors.
        None => commands::EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Edit(args) => commands::cmd_edit(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Eval(args) => commands::cmd_eval(args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
