//! Command-line surface: subcommands, flags, and their defaults.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use oddspot_core::detect::DetectionConfig;
use oddspot_core::features::FeatureMode;

#[derive(Debug, Parser)]
#[command(name = "oddspot", version, about = "Unsupervised image anomaly detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect anomalies in a PNG image or a raw feature map.
    Detect(DetectArgs),
    /// Run the pipeline on seeded white noise and check the false-alarm
    /// budget.
    SelftestNoise(SelftestArgs),
    /// Generate a synthetic fixture with its ground-truth file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Work on the image's color channels directly.
    Pixels,
    /// Load an FMAP feature file, sqrt-compress, PCA to 5 channels.
    Features,
}

#[derive(Debug, clap::Args)]
pub struct DetectArgs {
    /// PNG image (pixels mode) or FMAP feature file (features mode).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "pixels")]
    pub mode: Mode,
    /// NFA threshold: lower means fewer, stronger detections.
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    /// Comma-separated disk radii (default 1,2 for pixels, 1,2,3 for
    /// features).
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<usize>>,
    /// Pyramid depth.
    #[arg(long, default_value_t = 4)]
    pub scales: usize,
    /// Patch side (default 8 for pixels, 5 for features).
    #[arg(long)]
    pub patch_side: Option<usize>,
    /// Nearest patches averaged per query.
    #[arg(long, default_value_t = 16)]
    pub neighbors: usize,
    /// Similarity bandwidth of the patch weights.
    #[arg(long = "h", default_value_t = 10.0)]
    pub h: f64,
    /// Candidate-grid step (1 = exhaustive search).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Echoed into the report; detection itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit 1 when anything is detected (CI gate).
    #[arg(long, default_value_t = false)]
    pub fail_on_detect: bool,
}

impl DetectArgs {
    /// Detection configuration with mode defaults filled in where flags
    /// were omitted. `input_channels` only matters in features mode.
    pub fn config(&self, input_channels: usize) -> DetectionConfig {
        let mut config = match self.mode {
            Mode::Pixels => DetectionConfig::default_pixels(),
            Mode::Features => DetectionConfig::default_features(input_channels),
        };
        config.epsilon = self.epsilon;
        config.n_scales = self.scales;
        if let Some(radii) = &self.radii {
            config.kernel_radii = radii.clone();
        }
        if let Some(side) = self.patch_side {
            config.residual.patch_side = side;
        }
        config.residual.n_neighbors = self.neighbors;
        config.residual.h = self.h;
        config.residual.search_stride = self.stride;
        config
    }

    pub fn feature_mode(&self, input_channels: usize) -> FeatureMode {
        match self.mode {
            Mode::Pixels => FeatureMode::Pixels,
            Mode::Features => FeatureMode::ExternalFeatures { input_channels },
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SelftestArgs {
    /// Number of noise images to test.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Side of the square test images.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Tiled texture with one contrasting block.
    #[value(name = "periodic_block")]
    PeriodicBlock,
    /// Textured background with a small saturated dot.
    #[value(name = "color_dot")]
    ColorDot,
    /// Pure Gaussian noise, empty ground truth.
    #[value(name = "noise")]
    Noise,
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::PeriodicBlock => "periodic_block",
            SynthKind::ColorDot => "color_dot",
            SynthKind::Noise => "noise",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side of the square fixture.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
