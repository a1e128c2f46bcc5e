use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;
mod config;
mod output;

use config::RunConfig;

/// Profile extraction, user simulation, evaluation, sampling and reward emission.
#[derive(Debug, Parser)]
#[command(name = "usp", version)]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize, dedup, segment and filter a dialogue corpus.
    Ingest(commands::ingest::Args),
    /// Extract implicit profiles from dialogues.
    Extract(commands::extract::Args),
    /// Simulate dialogues from profiles or golden first turns.
    Simulate(commands::simulate::Args),
    /// Score dialogues with the metric suite.
    Evaluate(commands::evaluate::Args),
    /// Sample profiles by density, synthesize virtual ones, or pick dissimilar ones.
    Sample(commands::sample::Args),
    /// Run rollouts and write the per-utterance reward dataset.
    Reward(commands::reward::Args),
    /// Print a summary of evaluation or reward outputs.
    Report(commands::report::Args),
}

/// Finished, but some items failed; see the `.errors.json` report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Partial,
}

impl Status {
    pub fn from_errors<T>(errors: &[T]) -> Status {
        if errors.is_empty() {
            Status::Success
        } else {
            Status::Partial
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest::run(a, &mut cfg),
        Command::Extract(a) => commands::extract::run(a, &mut cfg),
        Command::Simulate(a) => commands::simulate::run(a, &mut cfg),
        Command::Evaluate(a) => commands::evaluate::run(a, &mut cfg),
        Command::Sample(a) => commands::sample::run(a, &mut cfg),
        Command::Reward(a) => commands::reward::run(a, &mut cfg),
        Command::Report(a) => commands::report::run(a),
    }
}

/// The error and its causes, skipping causes whose text the previous message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
