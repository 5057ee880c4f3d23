use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zeus_core::prompts::NormPolicy;

#[derive(Debug, Parser)]
#[command(
    name = "zeus",
    version,
    about = "Zero-shot whole-slide image segmentation from encoder embeddings"
)]
pub struct Cli {
    /// Flat TOML file of `flag-name = value` defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for internal parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for every random stream (mock encoders, phantom noise).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Geometry (+ thumbnail or tissue mask) -> grid.json
    Plan(PlanArgs),
    /// Grid -> embeddings.bin, or prompt spec -> text_embeddings.bin
    MockEncode(MockEncodeArgs),
    /// Prompt spec + per-prompt text embeddings -> prototypes.bin
    Prototypes(PrototypeArgs),
    /// Grid + embeddings + prototypes -> similarity maps and mask.png
    Segment(SegmentArgs),
    /// Masks + ground truth -> report.jsonl and report.txt
    Evaluate(EvaluateArgs),
    /// Thumbnail + masks -> overlay.png
    Overlay(OverlayArgs),
    /// Synthetic slide bundle with a known answer
    Phantom(PhantomArgs),
    /// plan, encode, prototypes, segment, evaluate and overlay in one run
    Pipeline(RunConfig),
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    #[arg(long, default_value = "slide")]
    pub slide_id: String,
    /// Slide width in pixels at the working magnification.
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = 10.0)]
    pub magnification: f64,
    #[arg(long)]
    pub mpp: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct LatticeArgs {
    #[arg(long, default_value_t = 448)]
    pub patch_size: u32,
    /// Fractional overlap between neighbouring patches (default 0.75).
    #[arg(long, conflicts_with = "stride")]
    pub overlap: Option<f64>,
    /// Explicit stride in pixels.
    #[arg(long)]
    pub stride: Option<u32>,
    #[arg(long, default_value_t = 0.25)]
    pub min_tissue_frac: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TissueArgs {
    /// RGB thumbnail for saturation-threshold tissue detection.
    #[arg(long, conflicts_with = "tissue_mask")]
    pub thumbnail: Option<PathBuf>,
    /// Slide pixels per thumbnail pixel.
    #[arg(long)]
    pub thumb_downsample: Option<u32>,
    /// External single-channel tissue mask (0 background, 255 tissue).
    #[arg(long)]
    pub tissue_mask: Option<PathBuf>,
    #[arg(long)]
    pub mask_downsample: Option<u32>,
    #[arg(long, default_value_t = 3)]
    pub median_radius: u32,
    /// `auto` (Otsu) or a level in 0..=255.
    #[arg(long, default_value = "auto")]
    pub sat_threshold: String,
    #[arg(long, default_value_t = 64)]
    pub min_region_px: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    pub tissue: TissueArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MockEncodeArgs {
    /// Grid manifest to encode patches for.
    #[arg(long, required_unless_present = "prompts")]
    pub grid: Option<PathBuf>,
    /// Prompt spec to encode prompts for.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value = "mock-encoder")]
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormFlag {
    Raw,
    Unit,
}

impl From<NormFlag> for NormPolicy {
    fn from(f: NormFlag) -> Self {
        match f {
            NormFlag::Raw => NormPolicy::RawMean,
            NormFlag::Unit => NormPolicy::NormalizeEachThenMean,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrototypeArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    /// Per-prompt ZEUSTXT1 file in prompt-expansion order.
    #[arg(long)]
    pub text_embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = NormFlag::Raw)]
    pub norm_policy: NormFlag,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub prototypes: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Predicted mask PNG (with its .json sidecar); repeat per slide.
    #[arg(long, required = true)]
    pub mask: Vec<PathBuf>,
    /// Ground-truth PNG, nonzero = tumor; one per --mask.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Slide pixels per ground-truth pixel; one value or one per --gt.
    #[arg(long, default_value = "1")]
    pub gt_downsample: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    pub tumor_class: u8,
    #[arg(long, default_value = "default")]
    pub group_key: String,
}

#[derive(Debug, Clone, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub thumbnail: PathBuf,
    #[arg(long)]
    pub thumb_downsample: u32,
    /// Predicted mask PNG; repeat to draw several predictions.
    #[arg(long)]
    pub mask: Vec<PathBuf>,
    /// Contour color per --mask, defaults #0000FF then #FF0000.
    #[arg(long)]
    pub mask_color: Vec<String>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub gt_downsample: u32,
    #[arg(long, default_value = "#00FF00")]
    pub gt_color: String,
    #[arg(long, default_value_t = 1)]
    pub tumor_class: u8,
    #[arg(long, default_value_t = 3)]
    pub thickness: u32,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value = "phantom")]
    pub slide_id: String,
    #[arg(long, default_value_t = 4480)]
    pub width: u32,
    #[arg(long, default_value_t = 4480)]
    pub height: u32,
    /// `x0,y0,x1,y1` in pixels; defaults to a centered half-size square.
    #[arg(long)]
    pub tumor_rect: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[command(flatten)]
    pub lattice: LatticeArgs,
}

/// Everything one end-to-end run needs.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    pub tissue: TissueArgs,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Per-prompt text embeddings; mock-encoded from the prompts when absent.
    #[arg(long)]
    pub text_embeddings: Option<PathBuf>,
    /// Patch embeddings; mock-encoded from the grid when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value = "mock-encoder")]
    pub model_id: String,
    #[arg(long, value_enum, default_value_t = NormFlag::Raw)]
    pub norm_policy: NormFlag,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub gt_downsample: u32,
    #[arg(long, default_value_t = 1)]
    pub tumor_class: u8,
    #[arg(long, default_value = "default")]
    pub group_key: String,
    #[arg(long, default_value_t = 3)]
    pub thickness: u32,
}
