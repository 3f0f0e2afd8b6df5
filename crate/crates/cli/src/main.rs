//! `evhar`: dataset generation, event encoding, training, evaluation,
//! inference and ablation from one binary.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{AblateArgs, DatagenArgs, EncodeArgs, EvalArgs, InferArgs, TrainArgs};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "evhar", version = manifest::VERSION, about = "Event-camera human action recognition")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Where to write the run manifest (default: inside the output directory).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode an event file or a grayscale video into an event-frame clip.
    Encode(EncodeArgs),
    /// Generate the synthetic six-class moving-blob dataset.
    Datagen(DatagenArgs),
    /// Train a model with early stopping and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split it was trained with.
    Eval(EvalArgs),
    /// Classify one sequence.
    Infer(InferArgs),
    /// Train the baseline and a grid of variants, writing one summary CSV.
    Ablate(AblateArgs),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("EVHAR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("EVHAR_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Failed(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let manifest = cli.global.manifest;
    let result = init_threads().and_then(|()| match cli.command {
        Command::Encode(a) => commands::encode(a, manifest),
        Command::Datagen(a) => commands::datagen(a, manifest),
        Command::Train(a) => commands::train(a, manifest),
        Command::Eval(a) => commands::eval(a, manifest),
        Command::Infer(a) => commands::infer(a, manifest),
        Command::Ablate(a) => commands::ablate(a, manifest),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
