use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scenepipe::model::{Architecture, Direction};

#[derive(Parser, Debug)]
#[command(
    name = "scenepipe",
    version,
    about = "Scene-dependent RAW <-> sRGB rendering models"
)]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic RAW/sRGB corpus with a manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Render one image with a trained model.
    Infer(InferArgs),
    /// Report Mean/Median/Min/Max PSNR over a manifest.
    Eval(EvalArgs),
    /// Finite-difference check of every layer and the composed models.
    Gradcheck(GradcheckArgs),
    /// Render a target image under a source image's global histogram.
    AnalyzeSwap(SwapArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram-conditioned shadow lift and highlight compression.
    #[arg(long, default_value_t = 0.7)]
    pub contrast_strength: f64,
    /// Chroma-conditioned saturation boost.
    #[arg(long, default_value_t = 0.4)]
    pub saturation_strength: f64,
    /// Local shadow lift from the blurred luminance mask.
    #[arg(long, default_value_t = 0.3)]
    pub shadow_lift_strength: f64,
    #[arg(long, default_value_t = 4)]
    pub lift_radius: usize,
    /// Sets every strength to zero (pure gamma rendering).
    #[arg(long)]
    pub no_enhancement: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DirectionArg {
    Raw2srgb,
    Srgb2raw,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Raw2srgb => Direction::RawToSrgb,
            DirectionArg::Srgb2raw => Direction::SrgbToRaw,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Scene,
    Mlp,
    Srcnn,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Scene => Architecture::Scene,
            ArchArg::Mlp => Architecture::Mlp,
            ArchArg::Srcnn => Architecture::Srcnn,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest CSV; 80% of its images train, 20% validate.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::Raw2srgb)]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = ArchArg::Scene)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the histogram at its initialization.
    #[arg(long)]
    pub freeze_context: bool,
    /// Channels of the hidden convolutions.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Images per batch.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Patches sampled per image.
    #[arg(long, default_value_t = 16)]
    pub patches: usize,
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    /// Downsize and center-crop images to SIZE x SIZE; 0 keeps them as is.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Best-validation checkpoint; the last epoch goes to `<out>.final`.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV (default `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Downsize and center-crop images to SIZE x SIZE; 0 keeps them as is.
    #[arg(long, default_value_t = 0)]
    pub size: usize,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb the analytic gradient of the named check (harness test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SwapChannelsArg {
    Luminance,
    All,
}

#[derive(Args, Debug)]
pub struct SwapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image whose histogram is injected.
    #[arg(long)]
    pub source: PathBuf,
    /// Image that is rendered.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SwapChannelsArg::Luminance)]
    pub channels: SwapChannelsArg,
    /// Replace the local pyramid scales too (same-size images only).
    #[arg(long)]
    pub all_scales: bool,
}
