use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;
use usp_core::extractor::LlmExtractor;
use usp_core::prompts::ExtractionPrompts;
use usp_core::reward::{emit_dataset, rollout, AiOrientation, RewardConfig};
use usp_core::simulator::{item_seed, SimBackends, SimulationConfig};
use usp_core::par_map;

use super::simulate::base_config;
use super::{gateway, load_profiles};
use crate::config::RunConfig;
use crate::output::{write_errors, write_meta, ItemError};
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OrientationArg {
    /// Reward human-looking utterances (1 - p).
    Human,
    /// Use the detector probability as is.
    Literal,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Profile JSONL to roll out.
    #[arg(long)]
    pub profiles: PathBuf,
    /// Reward record JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Weight of cycle consistency against authenticity, in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub orientation: Option<OrientationArg>,
    /// Maximum number of user turns per rollout.
    #[arg(long)]
    pub turn_limit: Option<usize>,
    /// Maximum total tokens per rollout.
    #[arg(long)]
    pub token_budget: Option<usize>,
    /// Directory of replacement extraction templates.
    #[arg(long)]
    pub prompt_dir: Option<PathBuf>,
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    if let Some(l) = args.lambda {
        cfg.reward.lambda = l;
    }
    if let Some(o) = args.orientation {
        cfg.reward.orientation = match o {
            OrientationArg::Human => AiOrientation::Human,
            OrientationArg::Literal => AiOrientation::Literal,
        };
    }
    if let Some(t) = args.turn_limit {
        cfg.simulation.turn_limit = t;
    }
    if let Some(b) = args.token_budget {
        cfg.simulation.token_budget = b;
    }
    let reward_cfg = RewardConfig {
        lambda: cfg.reward.lambda,
        orientation: cfg.reward.orientation,
    };
    reward_cfg.validate()?;
    let base = base_config(cfg);
    anyhow::ensure!(base.turn_limit > 0, "turn limit must be at least 1");
    anyhow::ensure!(base.token_budget > 0, "token budget must be at least 1");
    let prompts = match &args.prompt_dir {
        Some(dir) => ExtractionPrompts::from_dir(dir).context("loading prompt templates")?,
        None => ExtractionPrompts::default(),
    };
    let g = gateway(cfg)?;
    let profiles = load_profiles(&args.profiles)?;
    let backends = SimBackends::from_gateway(&g);

    let outcomes = par_map(&profiles, |p| {
        let seed = item_seed(cfg.seed, &p.id);
        let extractor = LlmExtractor {
            gateway: g.clone(),
            prompts: prompts.clone(),
            seed,
        };
        let sim = SimulationConfig { seed, ..base.clone() };
        rollout(p, &sim, &backends, &extractor, &g, &reward_cfg)
    });
    let mut errors = Vec::new();
    let mut results = Vec::new();
    for (p, r) in profiles.iter().zip(outcomes) {
        match r {
            Ok(res) => {
                if res.partial {
                    errors.push(ItemError::new(&p.id, "rollout ended on a backend error; records cover the turns before it"));
                }
                results.push(res);
            }
            Err(e) => errors.push(ItemError::new(&p.id, e)),
        }
    }
    let written = emit_dataset(&results, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    write_meta(
        &args.output,
        "reward",
        cfg,
        json!({ "rollouts": results.len(), "records": written }),
    )?;
    write_errors(&args.output, &errors)?;
    Ok(Status::from_errors(&errors))
}
