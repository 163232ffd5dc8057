//! `posekit`: onboard meshes, estimate poses, train the matcher and score results.

mod diagnose;
mod estimate;
mod eval;
mod failure;
mod inputs;
mod onboard;
mod options;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

/// Template-based 6D pose estimation for unseen objects.
///
/// Flag help marks each default as either the published method's value or a toolkit choice.
/// Set OPF_THREADS to cap the worker threads.
#[derive(Debug, Parser)]
#[command(name = "posekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a mesh and render its template set.
    Onboard(onboard::Args),
    /// Estimate object poses inside detection boxes.
    Estimate(estimate::Args),
    /// Train the descriptor network from a config file.
    Train(train::Args),
    /// Score a results CSV against ground truth.
    Eval(eval::Args),
    /// Write correspondence dumps, overlays and vote histograms for one detection.
    Diagnose(diagnose::Args),
    /// Render random synthetic test views with ground truth and detections.
    Synth(synth::Args),
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("OPF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("OPF_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(anyhow::anyhow!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Onboard(a) => onboard::run(a),
        Command::Estimate(a) => estimate::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Diagnose(a) => diagnose::run(a),
        Command::Synth(a) => synth::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
