use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;
use usp_core::extractor::{extract_profile, read_profiles, write_profiles};
use usp_core::prompts::ExtractionPrompts;
use usp_core::simulator::item_seed;
use usp_core::{par_map, UserProfile};

use super::{gateway, load_corpus};
use crate::config::RunConfig;
use crate::output::{write_errors, write_meta, ItemError};
use crate::Status;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dialogue JSONL (usually the output of `ingest`).
    #[arg(long)]
    pub input: PathBuf,
    /// Profile JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory of replacement prompt templates.
    #[arg(long)]
    pub prompt_dir: Option<PathBuf>,
    /// Keep profiles already in the output and only extract the missing ids.
    #[arg(long)]
    pub resume: bool,
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    let prompts = match &args.prompt_dir {
        Some(dir) => ExtractionPrompts::from_dir(dir).context("loading prompt templates")?,
        None => ExtractionPrompts::default(),
    };
    let g = gateway(cfg)?;
    let mut errors = Vec::new();
    let corpus = load_corpus(&args.input, &mut errors)?;

    let mut existing: HashMap<String, UserProfile> = HashMap::new();
    if args.resume && args.output.exists() {
        for p in read_profiles(&args.output).context("reading profiles to resume from")? {
            existing.insert(p.id.clone(), p);
        }
    }
    let todo: Vec<_> = corpus.dialogues.iter().filter(|d| !existing.contains_key(&d.id)).collect();
    tracing::info!(total = corpus.len(), skipped = corpus.len() - todo.len(), "extracting profiles");
    let results = par_map(&todo, |d| extract_profile(d, &g, &prompts, item_seed(cfg.seed, &d.id)));

    let mut fresh: HashMap<String, UserProfile> = HashMap::new();
    for (d, r) in todo.iter().zip(results) {
        match r {
            Ok(p) => {
                fresh.insert(d.id.clone(), p);
            }
            Err(e) => errors.push(ItemError::new(&d.id, e)),
        }
    }
    let mut out: Vec<UserProfile> = Vec::new();
    for d in &corpus.dialogues {
        if let Some(p) = existing.remove(&d.id).or_else(|| fresh.remove(&d.id)) {
            out.push(p);
        }
    }
    let mut leftover: Vec<UserProfile> = existing.into_values().collect();
    leftover.sort_by(|a, b| a.id.cmp(&b.id));
    out.extend(leftover);

    write_profiles(&args.output, &out).with_context(|| format!("writing {}", args.output.display()))?;
    write_meta(
        &args.output,
        "extract",
        cfg,
        json!({ "resume": args.resume, "custom_prompts": args.prompt_dir.is_some(), "profiles": out.len() }),
    )?;
    write_errors(&args.output, &errors)?;
    Ok(Status::from_errors(&errors))
}
