//! Cycle-consistency rewards.
//!
//! A rollout simulates a dialogue from a target profile, re-extracts a
//! reflected profile from it, and scores every simulated user utterance with
//! `r = λ·r_cc + (1-λ)·r_ai`. `r_cc` is the semantic similarity between the
//! target and reflected narratives and is shared by all utterances of the
//! dialogue; `r_ai` comes from the AI-text detector, per utterance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, Role};
use crate::extractor::{ExtractError, ProfileExtractor, UserProfile};
use crate::gateway::{Channel, Gateway, GatewayError};
use crate::simulator::{simulate, SeedMode, SimBackends, SimError, SimulatedDialogue, SimulationConfig, StopReason};

pub const DEFAULT_LAMBDA: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("dialogue {0} has no user turns")]
    NoUserTurns(String),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("reward dataset i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How the detector probability becomes a reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AiOrientation {
    /// `1 - p`: human-looking utterances score high.
    #[default]
    Human,
    /// `p` as is.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda: f64,
    pub orientation: AiOrientation,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: DEFAULT_LAMBDA,
            orientation: AiOrientation::Human,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        check_lambda(self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<(), RewardError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(RewardError::InvalidLambda(lambda))
    }
}

/// `λ·r_cc + (1-λ)·r_ai`
pub fn combine(r_cc: f64, r_ai: f64, lambda: f64) -> Result<f64, RewardError> {
    check_lambda(lambda)?;
    Ok(lambda * r_cc + (1.0 - lambda) * r_ai)
}

/// Semantic cosine between the full narratives of two profiles.
pub fn narrative_similarity(a: &UserProfile, b: &UserProfile, gateway: &Gateway) -> Result<f64, RewardError> {
    let v = gateway.embed(&[a.full_narrative(), b.full_narrative()], Channel::Semantic)?;
    Ok(v[0].cosine(&v[1]))
}

/// Extracts the reflected profile from `d_sim` and compares it with `p`.
pub fn cycle_reward(
    p: &UserProfile,
    d_sim: &Dialogue,
    extractor: &dyn ProfileExtractor,
    gateway: &Gateway,
) -> Result<(f64, UserProfile), RewardError> {
    if d_sim.user_turn_count() == 0 {
        return Err(RewardError::NoUserTurns(d_sim.id.clone()));
    }
    let reflected = extractor.extract(d_sim)?;
    Ok((narrative_similarity(p, &reflected, gateway)?, reflected))
}

pub fn ai_reward(u: &str, gateway: &Gateway, orientation: AiOrientation) -> Result<f64, RewardError> {
    if u.trim().is_empty() {
        return Err(RewardError::EmptyInput("utterance"));
    }
    let p = gateway.ai_detect(u)?;
    Ok(match orientation {
        AiOrientation::Human => 1.0 - p,
        AiOrientation::Literal => p,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub dialogue_id: String,
    /// 0-based index among the dialogue's user turns.
    pub turn: usize,
    pub context: Vec<ContextTurn>,
    pub utterance: String,
    pub r_cc: f64,
    pub r_ai: f64,
    pub r: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub profile: UserProfile,
    pub simulated: SimulatedDialogue,
    pub reflected: UserProfile,
    pub records: Vec<RewardRecord>,
    /// The simulation ended on a backend error; records cover the turns
    /// produced before it.
    pub partial: bool,
}

/// One record per user turn of `d`, all sharing `r_cc`.
pub fn score_dialogue(
    d: &Dialogue,
    r_cc: f64,
    gateway: &Gateway,
    cfg: &RewardConfig,
) -> Result<Vec<RewardRecord>, RewardError> {
    cfg.validate()?;
    let users: Vec<_> = d.user_turns().collect();
    let r_ai = crate::par_map(&users, |t| ai_reward(&t.text, gateway, cfg.orientation));
    users
        .iter()
        .zip(r_ai)
        .enumerate()
        .map(|(j, (t, r_ai))| {
            let r_ai = r_ai?;
            Ok(RewardRecord {
                dialogue_id: d.id.clone(),
                turn: j,
                context: d
                    .context_before_user_turn(j)
                    .iter()
                    .map(|c| ContextTurn {
                        role: c.role,
                        content: c.text.clone(),
                    })
                    .collect(),
                utterance: t.text.clone(),
                r_cc,
                r_ai,
                r: combine(r_cc, r_ai, cfg.lambda)?,
                lambda: cfg.lambda,
            })
        })
        .collect()
}

/// Simulate, reflect, score. `sim.seed_mode` is replaced by `p`.
pub fn rollout(
    p: &UserProfile,
    sim: &SimulationConfig,
    backends: &SimBackends,
    extractor: &dyn ProfileExtractor,
    gateway: &Gateway,
    cfg: &RewardConfig,
) -> Result<RolloutResult, RewardError> {
    cfg.validate()?;
    if !p.has_narratives() {
        return Err(RewardError::EmptyInput("profile narrative"));
    }
    let sim_cfg = SimulationConfig {
        seed_mode: SeedMode::ProfileSeeded { profile: p.clone() },
        ..sim.clone()
    };
    let simulated = simulate(&sim_cfg, backends)?;
    let (r_cc, reflected) = cycle_reward(p, &simulated.dialogue, extractor, gateway)?;
    let records = score_dialogue(&simulated.dialogue, r_cc, gateway, cfg)?;
    Ok(RolloutResult {
        profile: p.clone(),
        partial: simulated.stop_reason == StopReason::BackendError,
        simulated,
        reflected,
        records,
    })
}

/// Writes every record as one JSON line; returns the record count.
pub fn emit_dataset(results: &[RolloutResult], path: impl AsRef<Path>) -> Result<usize, RewardError> {
    if results.is_empty() {
        return Err(RewardError::EmptyInput("rollout results"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for rec in results.iter().flat_map(|r| &r.records) {
        writeln!(w, "{}", serde_json::to_string(rec).expect("records serialize"))?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}
