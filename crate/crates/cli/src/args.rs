use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rfn", version, about = "Text detection on industrial surfaces: synth, train, eval, infer, plot-pr")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write a loss log and checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, or a directory of result files, on a labelled set.
    Eval(EvalArgs),
    /// Detect text in images and write result files.
    Infer(InferArgs),
    /// Render precision/recall CSV files as a PNG chart.
    PlotPr(PlotArgs),
}

/// Configuration sources, applied in order: preset, file, `--set` pairs.
/// Subcommand flags win over all three.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base preset: `desk` (default) or `full-scale`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a single key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn is_empty(&self) -> bool {
        self.config.is_none() && self.preset.is_none() && self.set.is_empty()
    }
}

fn parse_toggle(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Number of images.
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: `$RFN_DATA_DIR/train` or `data.train`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Training set (default: `$RFN_DATA_DIR/train` or `data.train`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the loss log, checkpoint and config echo.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature-fusion attention module.
    #[arg(long, value_parser = parse_toggle, value_name = "on|off")]
    pub sff: Option<bool>,
    /// Attention-guided proposal refinement stage.
    #[arg(long, value_parser = parse_toggle, value_name = "on|off")]
    pub apr: Option<bool>,
    /// Attention re-scoring before the final NMS.
    #[arg(long, value_parser = parse_toggle, value_name = "on|off")]
    pub rescore: Option<bool>,
    /// Single-threaded, fully seeded run.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint to evaluate.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `res_<stem>.txt` files to score instead of a checkpoint.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Labelled set (default: `$RFN_DATA_DIR/test` or `data.test`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IoU threshold for a match.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Output directory for the report and CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for result files.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<stem>_overlay.png` with the detections drawn on.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// PR CSV files, optionally as `LABEL=PATH` (repeatable).
    #[arg(long = "csv", required = true, value_name = "[LABEL=]PATH")]
    pub csv: Vec<String>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
}
