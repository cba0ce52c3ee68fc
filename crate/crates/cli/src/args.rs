use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dept_core::config::{DefaultOrigin, FIELDS};

#[derive(Debug, Parser)]
#[command(
    name = "dept",
    version,
    about = "Depth and keypoint pre-training targets from lidar and pseudo 2D boxes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate per-frame target bundles for a dataset directory.
    GenTargets(GenTargetsArgs),
    /// Check every analytic gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the synthetic toy model.
    #[command(subcommand)]
    Toy(ToyCommand),
    /// Print per-class counts and loss weights for a detections file.
    ClassWeights(ClassWeightsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Pipeline fields that can be overridden on the command line. Unset flags
/// fall back to the `--config` file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// File of `key=value` lines overriding the defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<u32>,
    #[arg(long)]
    pub max_depth: Option<f64>,
    #[arg(long)]
    pub sigma_lo: Option<f64>,
    #[arg(long)]
    pub sigma_hi: Option<f64>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub propagated_weight: Option<f64>,
    #[arg(long)]
    pub min_iou: Option<f64>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenTargetsArgs {
    /// Directory holding calib/, velodyne/ and detections.ndjson.
    pub dataset: PathBuf,
    /// Output directory; one sub-directory per frame plus the report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Constant propagation σ used when no σ raster is given.
    #[arg(long, default_value_t = 1.0, conflicts_with = "sigma_dir")]
    pub sigma: f64,
    /// Directory of per-frame σ rasters `<frame_id>.txt` (one grid row per line).
    #[arg(long, value_name = "DIR")]
    pub sigma_dir: Option<PathBuf>,
    /// Image width for frames not listed in image_sizes.txt.
    #[arg(long, default_value_t = 1242)]
    pub image_width: u32,
    /// Image height for frames not listed in image_sizes.txt.
    #[arg(long, default_value_t = 375)]
    pub image_height: u32,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add this offset to every analytic gradient (negative control).
    #[arg(long, value_name = "DELTA", hide = true)]
    pub perturb_gradient: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum ToyCommand {
    /// Train one net and write its per-epoch loss table.
    Train(ToyTrainArgs),
    /// Depth pre-training vs. training from scratch, over several seeds.
    Transfer(ToyTransferArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Depth,
    Detection,
    Combined,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    #[arg(long, default_value_t = 0.01)]
    pub final_lr_fraction: f64,
    /// Frames per SGD step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub propagated_weight: f64,
}

#[derive(Debug, Args)]
pub struct ToyTrainArgs {
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Combined)]
    pub mode: Mode,
    /// Put every rectangle at this depth instead of sampling depths.
    #[arg(long, value_name = "METERS")]
    pub constant_depth: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyTransferArgs {
    /// Number of seeds, 0..N.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = dept_core::toygrad::TRANSFER_PRETRAIN_EPOCHS)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = dept_core::toygrad::TRANSFER_FINETUNE_EPOCHS)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = dept_core::toygrad::TRANSFER_SCENES)]
    pub scenes: usize,
    /// Fine-tune epochs compared by the verdict.
    #[arg(long, default_value_t = dept_core::toygrad::TRANSFER_WINDOW)]
    pub window: usize,
    /// Pre-train on the fine-tuning scenes themselves.
    #[arg(long)]
    pub same_data: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Directory for per-seed loss tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassWeightsArgs {
    /// Detections NDJSON file.
    #[arg(required_unless_present = "counts")]
    pub detections: Option<PathBuf>,
    #[arg(long, default_value_t = dept_core::config::DEFAULT_N_CLASSES)]
    pub n_classes: usize,
    #[arg(long, default_value_t = dept_core::config::DEFAULT_SCORE_THRESHOLD)]
    pub score_threshold: f64,
    /// Use these per-class counts instead of reading detections.
    #[arg(long, value_delimiter = ',', conflicts_with = "detections")]
    pub counts: Option<Vec<u64>>,
}

/// Help footer listing every pipeline field, its default and where the
/// default comes from.
pub fn config_fields_help() -> String {
    let mut out = String::from(
        "Pipeline configuration (--config FILE keys; flags of the same name override):\n",
    );
    for (key, default, origin, description) in FIELDS {
        let origin = match origin {
            DefaultOrigin::Published => "published constant",
            DefaultOrigin::Chosen => "chosen default",
        };
        out.push_str(&format!(
            "  {key:<18} default {default:<5} [{origin}] {description}\n"
        ));
    }
    out.push_str("\nEnvironment: DEPT_LOG=error|warn|info|debug sets log verbosity.\n");
    out.push_str("Exit codes: 0 success, 1 input error, 2 verification or divergence failure.\n");
    out
}

/// The clap command with the configuration footer attached to every
/// subcommand.
pub fn command() -> clap::Command {
    let footer = config_fields_help();
    fn attach(cmd: clap::Command, footer: &str) -> clap::Command {
        let names: Vec<String> = cmd
            .get_subcommands()
            .map(|s| s.get_name().to_string())
            .collect();
        let mut cmd = cmd.after_help(footer.to_string());
        for name in names {
            cmd = cmd.mut_subcommand(name, |s| attach(s, footer));
        }
        cmd
    }
    attach(<Cli as clap::CommandFactory>::command(), &footer)
}
