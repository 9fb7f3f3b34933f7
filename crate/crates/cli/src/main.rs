//! `grainform`: synthesize, preprocess, train, evaluate and run rice grain
//! classifiers.

mod artifacts;
mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use commands::{eval, infer, preprocess, report, synth, train};
use error::CliError;

pub const THREADS_ENV: &str = "GRAINFORM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "grainform", version, about = "Rice grain classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic class-per-directory image set
    Synth(synth::SynthArgs),
    /// Orientation-normalize images and tabulate their boxes
    Preprocess(preprocess::PreprocessArgs),
    /// Train a flat or hierarchical model
    Train(train::TrainArgs),
    /// Evaluate a trained run
    Eval(eval::EvalArgs),
    /// Classify one image
    Infer(infer::InferArgs),
    /// Tabulate finished runs
    Report(report::ReportArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation(format!("{THREADS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Preprocess(a) => preprocess::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
