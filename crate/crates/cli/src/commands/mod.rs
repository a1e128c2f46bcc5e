pub mod evaluate;
pub mod extract;
pub mod ingest;
pub mod report;
pub mod reward;
pub mod sample;
pub mod simulate;

use std::path::Path;

use anyhow::{Context, Result};
use usp_core::corpus::{load_dialogues, Corpus};
use usp_core::extractor::read_profiles;
use usp_core::{Gateway, UserProfile};

use crate::config::RunConfig;
use crate::output::ItemError;

pub fn gateway(cfg: &RunConfig) -> Result<Gateway> {
    Gateway::from_config(&cfg.gateway, cfg.seed).context("building backends")
}

/// Loads a dialogue file; malformed lines become item errors.
pub fn load_corpus(path: &Path, errors: &mut Vec<ItemError>) -> Result<Corpus> {
    let outcome = load_dialogues(path).with_context(|| format!("loading dialogues from {}", path.display()))?;
    errors.extend(outcome.errors.iter().map(|e| ItemError::new(path.display().to_string(), e)));
    Ok(outcome.corpus)
}

pub fn load_profiles(path: &Path) -> Result<Vec<UserProfile>> {
    let profiles = read_profiles(path).with_context(|| format!("loading profiles from {}", path.display()))?;
    anyhow::ensure!(!profiles.is_empty(), "no profiles in {}", path.display());
    Ok(profiles)
}
