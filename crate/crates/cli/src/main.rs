mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvc_core::Error;

/// Learned conditional video codec: training, coding and evaluation.
#[derive(Parser, Debug)]
#[command(name = "lvc", version)]
pub struct Cli {
    /// TOML file with optional [train], [code] and [anchors] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on synthetic moving-texture clips.
    Train(TrainArgs),
    /// Encode a YUV 4:2:0 file into a bitstream and a JSON report.
    Code(CodeArgs),
    /// Decode a bitstream back to YUV 4:2:0.
    Decode(DecodeArgs),
    /// Code a sequence with one or more models and write RD points, GOP reports and plots.
    Eval(EvalArgs),
    /// BD-rate between two RD CSV files.
    Bdrate(BdrateArgs),
    /// Write the diagnostic images of one coded frame.
    Visualize(VisualizeArgs),
    /// Run the x265/x264 anchor QP sweep through ffmpeg.
    Anchors(AnchorArgs),
    /// Write a synthetic moving-texture clip as YUV 4:2:0.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub features: Option<u64>,
    #[arg(long)]
    pub crop: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Sequence geometry and coding structure shared by several commands.
#[derive(Args, Debug, Clone)]
pub struct CodingArgs {
    #[arg(long)]
    pub width: Option<u64>,
    #[arg(long)]
    pub height: Option<u64>,
    /// AI, LDP or RA.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub gop_size: Option<u64>,
    /// Number of GOPs (frames for AI); defaults to as many as the input holds.
    #[arg(long)]
    pub gops: Option<u64>,
    /// Frame rate used to express rates in Mbit/s.
    #[arg(long)]
    pub fps: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub bitstream: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Original YUV file; when given, PSNR of the decoded frames is reported.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// One checkpoint per RD point (typically one per lambda).
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Curve label in the RD CSV, e.g. `B/Cactus`.
    #[arg(long, default_value = "sequence")]
    pub label: String,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct BdrateArgs {
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Also write the table as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Display index of the frame to visualize.
    #[arg(long, default_value_t = 1)]
    pub frame: usize,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct AnchorArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "sequence")]
    pub label: String,
    /// x265 or x264.
    #[arg(long)]
    pub codec: Option<String>,
    #[arg(long)]
    pub ffmpeg: Option<PathBuf>,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit status for each error class.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Unavailable(_) => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
