//! `polarfuse`: decode captures, simulate datasets, pretrain, train, evaluate
//! and export point clouds.
//!
//! Exit codes: 0 success, 2 bad input, 3 numeric failure, 4 bad configuration.

mod commands;
mod failure;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;
use settings::{Flags, Settings};

/// Worker thread cap for parallel rendering and batch gradients.
const THREADS_VAR: &str = "POLARFUSE_THREADS";

#[derive(Args, Debug)]
struct Common {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// ppft, no-ppft, rgb-guidance, early-fusion or shallow-ppfb.
    #[arg(long)]
    ablation: Option<String>,
    /// Encoder stage count.
    #[arg(long)]
    stages: Option<usize>,
    /// Width of the first stage; each later stage doubles it.
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode a four-angle DoFP capture into intensity, AoLP, DoLP and guidance rasters.
    Decode {
        /// PFT1 capture of shape [4, H, W].
        #[arg(long)]
        input: Option<PathBuf>,
        /// Intrinsics file; defaults to intrinsics.txt beside the input.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
    },
    /// Render a synthetic dataset with degraded sensor depth.
    Simulate {
        /// Number of samples.
        #[arg(long)]
        scenes: Option<usize>,
        /// Square image extent in pixels.
        #[arg(long)]
        resolution: Option<usize>,
        /// `mixed` or a comma list of stereo-holes, dtof-transparent, itof-fov-crop.
        #[arg(long)]
        degradation: Option<String>,
    },
    /// Pretrain the bare backbone on intensity-only guidance.
    Foundation {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a depth enhancement model.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained backbone archive.
        #[arg(long)]
        foundation: Option<PathBuf>,
        /// Comma list of parameter-name prefixes to keep fixed.
        #[arg(long)]
        freeze: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a checkpoint or stored predictions per degradation mode.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of pred_NNNNN.pft files.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Base of the δ accuracy thresholds.
        #[arg(long)]
        threshold_base: Option<f64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Export sensor, ground-truth and predicted depth of one sample as PLY.
    Pointcloud {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sample index.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn model_flags(flags: &mut Flags, m: &ModelArgs) {
    flags.set("ablation", &m.ablation).set("stages", &m.stages).set("channels", &m.channels);
}

fn train_flags(flags: &mut Flags, t: &TrainArgs) {
    flags
        .set("steps", &t.steps)
        .set("lr", &t.lr)
        .set("optimizer", &t.optimizer)
        .set("batch-size", &t.batch_size);
}

fn run(command: Command, common: Common) -> Result<(), Failure> {
    let mut flags = Flags::default();
    flags.set("seed", &common.seed);
    let (name, keys, action): (_, _, fn(&Settings) -> Result<(), Failure>) = match &command {
        Command::Decode { input, intrinsics } => {
            flags.set_path("input", input).set_path("intrinsics", intrinsics);
            ("decode", commands::DECODE_KEYS, commands::decode)
        }
        Command::Simulate {
            scenes,
            resolution,
            degradation,
        } => {
            flags
                .set("scenes", scenes)
                .set("resolution", resolution)
                .set("degradation", degradation);
            ("simulate", commands::SIMULATE_KEYS, commands::simulate)
        }
        Command::Foundation { data, model, train } => {
            flags.set_path("data", data);
            model_flags(&mut flags, model);
            train_flags(&mut flags, train);
            ("foundation", commands::FOUNDATION_KEYS, commands::foundation)
        }
        Command::Train {
            data,
            foundation,
            freeze,
            model,
            train,
        } => {
            flags
                .set_path("data", data)
                .set_path("foundation", foundation)
                .set("freeze", freeze);
            model_flags(&mut flags, model);
            train_flags(&mut flags, train);
            ("train", commands::TRAIN_KEYS, commands::train)
        }
        Command::Eval {
            data,
            checkpoint,
            predictions,
            threshold_base,
            model,
        } => {
            flags
                .set_path("data", data)
                .set_path("checkpoint", checkpoint)
                .set_path("predictions", predictions)
                .set("threshold-base", threshold_base);
            model_flags(&mut flags, model);
            ("eval", commands::EVAL_KEYS, commands::eval)
        }
        Command::Pointcloud {
            data,
            index,
            checkpoint,
            model,
        } => {
            flags
                .set_path("data", data)
                .set("index", index)
                .set_path("checkpoint", checkpoint);
            model_flags(&mut flags, model);
            ("pointcloud", commands::POINTCLOUD_KEYS, commands::pointcloud)
        }
    };
    let settings = Settings::resolve(name, keys, common.config.as_deref(), common.out.as_deref(), &flags)?;
    action(&settings)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("{THREADS_VAR}={raw} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("{THREADS_VAR}: {e}")))
}

#[derive(Parser, Debug)]
#[command(name = "polarfuse", version, about = "Polarization-guided depth enhancement experiments")]
struct Invocation {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = match Invocation::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(failure::EXIT_CONFIG);
        }
    };
    match configure_threads().and_then(|()| run(cli.command, cli.common)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
