use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rsfield_cli::{cmd_eval, cmd_render, cmd_synth, cmd_train, exit_code, EvalArgs, RenderArgs};
use rsfield_core::io::RunConfig;
use rsfield_core::metrics::Alignment;

#[derive(Parser)]
#[command(
    name = "rsfield",
    about = "Rolling-shutter radiance fields: synthesize data, jointly optimize \
             trajectory and scene, render undistorted views, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlignmentArg {
    Se3,
    Sim3,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rolling-shutter dataset from the config's
    /// `synth` section.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Override the dataset directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (1 = deterministic single-threaded mode).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Jointly optimize the radiance field and the camera trajectory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render global-shutter images from a checkpoint at query times.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated query times in seconds.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Expand to a uniform sequence over the trajectory window.
        #[arg(long)]
        fps: Option<f64>,
        /// Render at the dataset frame-start times with dataset-aligned names.
        #[arg(long, default_value_t = false)]
        at_frames: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Compare rendered images and trajectories against a reference.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AlignmentArg::Sim3)]
        alignment: AlignmentArg,
        #[arg(long, default_value_t = 1)]
        rpe_delta: usize,
    },
}

fn load_config(
    path: &PathBuf,
    output: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    output_is_dataset: bool,
) -> rsfield_core::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = output {
        if output_is_dataset {
            cfg.dataset = out;
        } else {
            cfg.output = out;
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn run() -> rsfield_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            config,
            output,
            seed,
            threads,
        } => {
            let cfg = load_config(&config, output, seed, threads, true)?;
            cmd_synth(&cfg)?;
        }
        Command::Train {
            config,
            output,
            seed,
            threads,
        } => {
            let cfg = load_config(&config, output, seed, threads, false)?;
            cmd_train(&cfg)?;
        }
        Command::Render {
            checkpoint,
            output,
            times,
            fps,
            at_frames,
            threads,
        } => {
            cmd_render(&RenderArgs {
                checkpoint,
                output,
                times,
                fps,
                at_frames,
                threads,
            })?;
        }
        Command::Eval {
            estimate,
            reference,
            output,
            alignment,
            rpe_delta,
        } => {
            cmd_eval(&EvalArgs {
                estimate,
                reference,
                output,
                alignment: match alignment {
                    AlignmentArg::Se3 => Alignment::Se3,
                    AlignmentArg::Sim3 => Alignment::Sim3,
                },
                rpe_delta,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
