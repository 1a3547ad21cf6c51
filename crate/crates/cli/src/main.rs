//! `lss`: gradient checks, the synthetic benchmark, MixUp3D augmentation and
//! selection inspection.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Preset;

#[derive(Debug, Parser)]
#[command(name = "lss", version, about = "Learnable sample selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed (bench: first of a consecutive seed list; inspect: Gumbel noise seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare hand-derived gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the synthetic sample-selection benchmark.
    Bench(BenchArgs),
    /// Apply MixUp3D to a KITTI-layout directory.
    Augment(AugmentArgs),
    /// Dump the soft map and sample maps for a logit vector.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Restrict to these ops (repeatable).
    #[arg(long = "op")]
    pub ops: Vec<lss_core::gradcheck::OpId>,
    /// Random points per op.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    /// KITTI-layout input directory (image_2/, label_2/, calib/).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fixed mix proportion.
    #[arg(long, conflicts_with = "beta_alpha")]
    pub lambda: Option<f64>,
    /// Draw the mix proportion from Beta(α, α).
    #[arg(long)]
    pub beta_alpha: Option<f64>,
    /// Relative tolerance on focal lengths and principal point.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated logits, e.g. "20,18,17,7".
    #[arg(long, allow_hyphen_values = true, conflicts_with = "logits_file")]
    pub logits: Option<String>,
    /// File of logits separated by commas or whitespace; "-" reads stdin.
    #[arg(long)]
    pub logits_file: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Retained cells become 1 instead of keeping their soft value.
    #[arg(long)]
    pub binarize: bool,
}

/// Result of a subcommand that ran to completion.
pub enum Outcome {
    Success,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::Bench(a) => commands::bench::run(a),
        Command::Augment(a) => commands::augment::run(a),
        Command::Inspect(a) => commands::inspect::run(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
