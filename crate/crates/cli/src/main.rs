//! `dit`: train, sample, count flops and check the toy diffusion transformer.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dit::model::BlockVariant;

#[derive(Parser, Debug)]
#[command(name = "dit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config file, or the manifest.json of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (default: $DIT_RUNS_DIR/<timestamp>-<subcommand>, or ./runs/...).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the toy latent stream.
    Train(commands::TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(commands::SampleArgs),
    /// Print the flop and parameter breakdown of a model.
    Flops(commands::FlopsArgs),
    /// Compare computed flops and parameters with published figures.
    Conformance(commands::ConformanceArgs),
    /// Finite-difference check of the training gradient.
    Gradcheck(commands::GradCheckArgs),
    /// Write the noise schedule, optionally respaced.
    Schedule(commands::ScheduleArgs),
    /// Evaluate checkpoints across sampling step counts.
    Sweep(commands::SweepArgs),
}

pub fn parse_variant(s: &str) -> Result<BlockVariant, String> {
    s.parse().map_err(|e: dit::Error| e.to_string())
}

fn remedy(err: &anyhow::Error) -> &'static str {
    use dit::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<dit::Error>()) {
        Some(E::Config(_)) | Some(E::Index { .. }) => {
            "fix the flag or config value named above; see `dit <subcommand> --help`"
        }
        Some(E::NonFinite(_)) => "lower the learning rate, or resume from an earlier checkpoint",
        Some(E::Format(_)) | Some(E::MissingTensor(_)) => {
            "pass a file written by this tool (checkpoints come from `dit train`)"
        }
        Some(E::Io(_)) => "check that the path exists and is writable",
        Some(_) => "rerun with RUST_LOG=debug and report the failure",
        None if err.chain().any(|e| e.is::<std::io::Error>()) => {
            "check that the path exists and is writable"
        }
        None => "see `dit <subcommand> --help`",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Flops(a) => commands::flops(a),
        Command::Conformance(a) => commands::conformance(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            eprintln!("hint: {}", remedy(&err));
            ExitCode::FAILURE
        }
    }
}
