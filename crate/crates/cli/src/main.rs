//! `exgs`: generate synthetic datasets, train, render and evaluate.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on bad input (missing
//! or malformed files, invalid configuration, unsupported checkpoints).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "exgs", version, about = "Gaussian scene-graph toolkit for driving-scene view extrapolation")]
struct Cli {
    /// Worker threads (falls back to EXGS_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: images, masks, cameras, shifted and probe renders.
    Synth {
        /// Scene spec JSON; the built-in default scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset with the extrapolation schedule.
    Train(commands::TrainArgs),
    /// Render a checkpoint at the cameras of a camera file.
    Render(commands::RenderArgs),
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval(commands::EvalArgs),
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("EXGS_THREADS") {
        Ok(s) => {
            let n = s
                .trim()
                .parse::<usize>()
                .map_err(|_| exgs::Error::invalid("EXGS_THREADS", format!("not a thread count: {s:?}")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(exgs::Error::invalid("threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth { spec, out } => commands::synth(spec.as_deref(), &out),
        Command::Train(a) => commands::train(&a),
        Command::Render(a) => commands::render(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}

/// 2 when any error in the chain is a bad-input error, else 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let bad = err
        .chain()
        .filter_map(|e| e.downcast_ref::<exgs::Error>())
        .any(exgs::Error::is_bad_input);
    if bad {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
