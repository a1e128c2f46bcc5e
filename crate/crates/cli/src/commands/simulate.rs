use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde_json::json;
use usp_core::corpus::write_dialogues;
use usp_core::simulator::{run_batch, run_context_batch, SeedMode, SimBackends, SimulationConfig};

use super::{gateway, load_corpus, load_profiles};
use crate::config::RunConfig;
use crate::output::{write_errors, write_meta, ItemError};
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SeedModeArg {
    /// Role-play each profile from the bootstrap question.
    Profile,
    /// Continue each golden dialogue from its first user turn.
    Context,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Profile JSONL to role-play.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Golden dialogue JSONL whose first user turns seed the simulation.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    /// Defaults to `profile` with --profiles and `context` with --contexts.
    #[arg(long, value_enum)]
    pub seed_mode: Option<SeedModeArg>,
    /// Simulated dialogue JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Maximum number of user turns.
    #[arg(long)]
    pub turn_limit: Option<usize>,
    /// Maximum total tokens per dialogue.
    #[arg(long)]
    pub token_budget: Option<usize>,
    /// Disable gratitude and repetition early stopping.
    #[arg(long)]
    pub no_early_stop: bool,
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    if let Some(t) = args.turn_limit {
        cfg.simulation.turn_limit = t;
    }
    if let Some(b) = args.token_budget {
        cfg.simulation.token_budget = b;
    }
    if args.no_early_stop {
        cfg.simulation.early_stop = false;
    }
    let mode = match (args.seed_mode, &args.profiles, &args.contexts) {
        (Some(m), _, _) => m,
        (None, Some(_), None) => SeedModeArg::Profile,
        (None, None, Some(_)) => SeedModeArg::Context,
        (None, Some(_), Some(_)) => bail!("both --profiles and --contexts given; pick one with --seed-mode"),
        (None, None, None) => bail!("one of --profiles or --contexts is required"),
    };
    let base = base_config(cfg);
    anyhow::ensure!(base.turn_limit > 0, "turn limit must be at least 1");
    anyhow::ensure!(base.token_budget > 0, "token budget must be at least 1");
    let g = gateway(cfg)?;
    let backends = SimBackends::from_gateway(&g);
    let mut errors = Vec::new();
    let results = match mode {
        SeedModeArg::Profile => {
            let path = args.profiles.as_ref().context("--seed-mode profile needs --profiles")?;
            run_batch(&load_profiles(path)?, &base, &backends)?
        }
        SeedModeArg::Context => {
            let path = args.contexts.as_ref().context("--seed-mode context needs --contexts")?;
            let corpus = load_corpus(path, &mut errors)?;
            run_context_batch(&corpus.dialogues, &base, &backends)?
        }
    };
    let mut dialogues = Vec::new();
    for r in results {
        match r {
            Ok(sim) => {
                if let Some(e) = &sim.error {
                    errors.push(ItemError::new(&sim.dialogue.id, format!("stopped early on backend error: {e}")));
                }
                dialogues.push(sim.dialogue);
            }
            Err(e) => errors.push(ItemError::new("simulation", e)),
        }
    }
    write_dialogues(&args.output, &dialogues).with_context(|| format!("writing {}", args.output.display()))?;
    let mode_name = match mode {
        SeedModeArg::Profile => "profile",
        SeedModeArg::Context => "context",
    };
    write_meta(
        &args.output,
        "simulate",
        cfg,
        json!({ "seed_mode": mode_name, "dialogues": dialogues.len() }),
    )?;
    write_errors(&args.output, &errors)?;
    Ok(Status::from_errors(&errors))
}

/// Simulation settings shared by `simulate` and `reward`; the seed mode is replaced per item.
pub fn base_config(cfg: &RunConfig) -> SimulationConfig {
    SimulationConfig {
        turn_limit: cfg.simulation.turn_limit,
        token_budget: cfg.simulation.token_budget,
        early_stop_enabled: cfg.simulation.early_stop,
        repetition_threshold: cfg.simulation.repetition_threshold,
        seed: cfg.seed,
        ..SimulationConfig::new(SeedMode::ContextSeeded {
            dialogue_id: String::new(),
            first_turn: String::new(),
        })
    }
}
