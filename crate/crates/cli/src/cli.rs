use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use segalign_core::mask::CropVariant;
use segalign_core::pipeline::AblationPreset;
use segalign_core::saliency::GradcamMode;

#[derive(Debug, Parser)]
#[command(name = "segalign", version, about = "Zero-shot OVSS and RES over mask proposals")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline config, or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Class text bank tools.
    #[command(subcommand)]
    Bank(BankCmd),
    /// Proposal container tools.
    #[command(subcommand)]
    Proposals(ProposalsCmd),
    /// Open-vocabulary semantic segmentation.
    #[command(subcommand)]
    Ovss(RunCmd),
    /// Referring expression segmentation.
    #[command(subcommand)]
    Res(RunCmd),
    /// Score a results directory against ground truth.
    Eval(EvalArgs),
    /// Render input/proposal/prediction panels.
    Overlay(OverlayArgs),
    /// Run a named ablation grid.
    Ablate {
        #[arg(value_parser = parse_preset)]
        preset: AblationPreset,
    },
}

#[derive(Debug, Subcommand)]
pub enum BankCmd {
    /// Render every prompt of a bank definition to JSON.
    Build {
        bank: PathBuf,
        /// Preset name or a literal containing `{CLASS}`.
        #[arg(long)]
        template: Option<String>,
        /// Comma list of synonyms, backgrounds, descriptions; or all / none.
        #[arg(long, default_value = "all")]
        augment: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a bank definition and print a summary.
    Validate { bank: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ProposalsCmd {
    /// Pack `<image_id>_<mask_id>.png` masks from a directory into a container.
    Import {
        masks: PathBuf,
        #[arg(long)]
        image_id: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a synthetic dataset from a scene spec, or a single synthetic container.
    Synth {
        /// Scene spec; writes images, proposals, ground truth, tensors and a config.
        #[arg(long, requires = "bank")]
        scenes: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, conflicts_with = "scenes")]
        image_id: Option<String>,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        /// `grid` or the count of random rectangles.
        #[arg(long, default_value = "grid")]
        layout: String,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum RunCmd {
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<CropVariant>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_gradcam)]
    pub gradcam: Option<GradcamMode>,
    /// Export the thresholded saliency map instead of selecting a proposal.
    #[arg(long)]
    pub no_selection: bool,
    #[arg(long)]
    pub expressions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Proposal containers to score under the proposal-matching protocol.
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    #[arg(long)]
    pub expressions: Option<PathBuf>,
    /// Bank whose class names and unseen list define the split.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Unseen categories, comma separated; taxonomy is then the ground-truth categories.
    #[arg(long, value_delimiter = ',', conflicts_with = "bank")]
    pub unseen: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub proposals: Option<PathBuf>,
}

fn parse_crop(s: &str) -> Result<CropVariant, String> {
    s.parse().map_err(|e: segalign_core::Error| e.to_string())
}

fn parse_gradcam(s: &str) -> Result<GradcamMode, String> {
    s.parse().map_err(|e: segalign_core::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<AblationPreset, String> {
    s.parse().map_err(|e: segalign_core::Error| e.to_string())
}
