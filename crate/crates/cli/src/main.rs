//! `playrecon` command line: per-stage commands, the full pipeline, the
//! synthetic generator and classifier training and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed input, invalid configuration.
    #[error("input error: {0}")]
    Input(String),
    /// A stage ran and failed.
    #[error("stage failed: {0}")]
    Stage(String),
}

impl From<playrecon::io::IoError> for CliError {
    fn from(e: playrecon::io::IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Stage(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "playrecon", version, about = "Baseball play reconstruction from poses, frames and detector boxes")]
pub struct Cli {
    /// Configuration file; repeat to layer several, later files win.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Seed for the generator and the trainer.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Follow one player through a pose stream and smooth the trajectories.
    TrackPose(TrackPoseArgs),
    /// Fast-moving-object candidates of a frame sequence.
    Fmoc(FmocArgs),
    /// Ball tracks from motion candidates.
    Gbcv(GbcvArgs),
    /// Event time line from trajectories, candidates and the ball track.
    Events(EventsArgs),
    /// Release speed from a ball track.
    Speed(SpeedArgs),
    /// Bat track from detector boxes and motion candidates.
    Bat(BatArgs),
    /// Train the movement classifier, optionally with cross-validation.
    Train(TrainArgs),
    /// Score the pipeline on synthetic plays or a model on a dataset.
    Eval(EvalArgs),
    /// Write a synthetic play or a labeled trajectory dataset.
    Synth(SynthArgs),
    /// Run the whole pipeline and write a reconstruction bundle.
    Run(RunArgs),
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok([num(x)?, num(y)?])
}

fn parse_range(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected start..end, got {s}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    let (a, b) = (num(a)?, num(b)?);
    if a >= b {
        return Err(format!("empty range {s}"));
    }
    Ok([a, b])
}

#[derive(Debug, Args)]
pub struct TrackPoseArgs {
    /// Pose stream, one JSON record per frame.
    #[arg(long)]
    poses: PathBuf,
    /// Point inside the player in the first frame with detections.
    #[arg(long, value_parser = parse_point)]
    start: [f64; 2],
    /// Smoothed trajectories.
    #[arg(long)]
    out: PathBuf,
    /// Also write the raw, gappy trajectories here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FmocArgs {
    /// PGM directory or raw frame stream.
    #[arg(long)]
    frames: PathBuf,
    /// Play index of the first frame.
    #[arg(long)]
    first_frame: Option<usize>,
    /// Frame stride, overriding the configuration.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GbcvArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Release pixel, overriding the configuration.
    #[arg(long, value_parser = parse_point)]
    release_point: Option<[f64; 2]>,
    /// Every ranked track.
    #[arg(long)]
    out: PathBuf,
    /// Best track with its release frame.
    #[arg(long)]
    ball_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EventsArgs {
    /// Pitcher trajectories (raw or smoothed).
    #[arg(long)]
    pitcher: Option<PathBuf>,
    /// Motion candidates for the first movement.
    #[arg(long)]
    candidates: Vec<PathBuf>,
    /// Smoothed batter trajectories.
    #[arg(long)]
    batter: Option<PathBuf>,
    /// Ball track carrying the release frame.
    #[arg(long, conflicts_with = "release")]
    ball: Option<PathBuf>,
    #[arg(long)]
    release: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpeedArgs {
    /// Ball track.
    #[arg(long)]
    ball: PathBuf,
    /// Plane shift toward the camera in meters, added to the configured one.
    #[arg(long, default_value_t = 0.0)]
    plane_offset: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Motion candidates; repeat to merge several files.
    #[arg(long)]
    candidates: Vec<PathBuf>,
    /// Batter trajectories for tip and base.
    #[arg(long)]
    batter: Option<PathBuf>,
    /// Swing frames as start..end.
    #[arg(long, value_parser = parse_range)]
    frames: Option<[usize; 2]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSON as written by `synth dataset`.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint of a model trained on the whole dataset.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Number of cross-validation folds.
    #[arg(long)]
    cv: Option<usize>,
    /// Directory for the cross-validation report, confusion matrix and loss
    /// curves.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Use a small network instead of the standard one.
    #[arg(long)]
    small: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Number of synthetic plays to reconstruct.
    #[arg(long, default_value_t = 0)]
    plays: usize,
    /// Dataset and checkpoint to score the classifier on.
    #[arg(long, requires = "model")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for the plot-ready series.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// A complete play: frames, pose streams, detector boxes, candidates,
    /// ground truth and a matching configuration.
    Play {
        #[arg(long)]
        out: PathBuf,
        /// Write a raw frame stream instead of PGM files.
        #[arg(long)]
        raw: bool,
    },
    /// Labeled joint trajectories with distinct movement per class.
    Dataset {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 40)]
        len: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Directory written by `synth play`; fills every input not given
    /// explicitly and layers its configuration under `--config`.
    #[arg(long)]
    play: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    first_frame: Option<usize>,
    #[arg(long)]
    pitcher_poses: Option<PathBuf>,
    #[arg(long)]
    batter_poses: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    extra_candidates: Option<PathBuf>,
    /// Run only these stages; repeat for several.
    #[arg(long)]
    stage: Vec<String>,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("playrecon: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
