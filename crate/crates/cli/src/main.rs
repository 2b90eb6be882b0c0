use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use pitchcal::io::{run_batch, BatchSummary, Config, FrameStatus, Mode, RunManifest};
use pitchcal::Error;

/// Broadcast camera calibration from football pitch markings.
#[derive(Debug, Parser)]
#[command(name = "pitchcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive keypoints from annotation files.
    Derive {
        #[command(flatten)]
        common: Common,
        /// Relabel keypoints so the goal nearer the camera is the left one.
        #[arg(long)]
        remap: bool,
    },
    /// Calibrate cameras from detections (or annotations).
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Write SVG overlays next to the camera files.
        #[arg(long)]
        overlay: bool,
    },
    /// Calibrate and score against ground-truth annotations.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Generate synthetic frames with known cameras.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of frames to generate.
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long)]
        overlay: bool,
    },
    /// Grid-search the voter confidence thresholds for the best score.
    Tune {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Input directory.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    output: PathBuf,
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, short, default_value_t = 0)]
    jobs: usize,
    /// Evaluation thresholds in pixels, comma separated.
    #[arg(long, value_delimiter = ',')]
    threshold: Vec<f64>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn manifest(cli: Cli) -> Result<RunManifest, Error> {
    let (mode, common, frames, overlay, remap) = match cli.command {
        Command::Derive { common, remap } => (Mode::Derive, common, 0, false, remap),
        Command::Calibrate { common, overlay } => (Mode::Calibrate, common, 0, overlay, false),
        Command::Evaluate { common } => (Mode::Evaluate, common, 0, false, false),
        Command::Synth {
            common,
            frames,
            overlay,
        } => (Mode::Synth, common, frames, overlay, false),
        Command::Tune { common } => (Mode::Tune, common, 0, false, false),
    };
    if mode != Mode::Synth && common.input.is_none() {
        return Err(Error::Config("--input is required".into()));
    }
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if !common.threshold.is_empty() {
        config.thresholds = common.threshold.clone();
    }
    config.derive.remap |= remap;
    Ok(RunManifest {
        mode,
        input: common.input,
        output: common.output,
        config,
        jobs: common.jobs,
        seed: common.seed,
        frames,
        overlay,
    })
}

fn print_summary(s: &BatchSummary) {
    println!(
        "frames: {} ok, {} without output, {} errors",
        s.count(FrameStatus::Ok),
        s.count(FrameStatus::NoOutput),
        s.count(FrameStatus::Error)
    );
    for f in s.frames.iter().filter(|f| f.status == FrameStatus::Error) {
        warn!("{}: {}", f.frame, f.message.as_deref().unwrap_or("error"));
    }
    if let Some(r) = &s.report {
        for t in &r.thresholds {
            match t.acc {
                Some(a) => println!("acc@{}: {a:.4}", t.t),
                None => println!("acc@{}: undefined", t.t),
            }
        }
        println!("cr: {:.4}", r.completeness_ratio);
        println!("score: {:.4}", r.score);
        if let Some(l2) = r.l2_px {
            println!("l2: {l2:.3} px");
        }
    }
    if let Some(t) = &s.tune {
        println!("best thresholds: {:?} (score {:.4})", t.best.confidence_thresholds, t.best.score);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = manifest(cli).and_then(|m| run_batch(&m));
    match result {
        Ok(summary) => {
            print_summary(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
