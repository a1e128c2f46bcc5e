use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;
use usp_core::corpus::{apply_filters, dedup_exact, min_user_turns, segment_dialogue, write_dialogues, FilterHook, WordProxyCounter};

use super::load_corpus;
use crate::config::RunConfig;
use crate::output::{write_errors, write_meta, ItemError};
use crate::Status;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Raw dialogue JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Normalized dialogue JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Segment budget in tokens.
    #[arg(long)]
    pub token_budget: Option<usize>,
    /// Drop dialogues with fewer user turns.
    #[arg(long)]
    pub min_user_turns: Option<usize>,
    /// Keep exact duplicates.
    #[arg(long)]
    pub no_dedup: bool,
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    if let Some(b) = args.token_budget {
        cfg.ingest.token_budget = b;
    }
    if let Some(m) = args.min_user_turns {
        cfg.ingest.min_user_turns = m;
    }
    if args.no_dedup {
        cfg.ingest.dedup = false;
    }
    anyhow::ensure!(cfg.ingest.token_budget > 0, "token budget must be positive");
    let mut errors = Vec::new();
    let mut corpus = load_corpus(&args.input, &mut errors)?;
    let loaded = corpus.len();
    if cfg.ingest.dedup {
        corpus = dedup_exact(corpus);
    }
    let deduped = corpus.len();
    let mut segments = Vec::new();
    for d in &corpus.dialogues {
        match segment_dialogue(d, cfg.ingest.token_budget, &WordProxyCounter) {
            Ok(s) => segments.extend(s),
            Err(e) => errors.push(ItemError::new(&d.id, e)),
        }
    }
    corpus.dialogues = segments;
    corpus.token_budget = cfg.ingest.token_budget;
    let hooks: Vec<Box<dyn FilterHook>> = vec![Box::new(min_user_turns(cfg.ingest.min_user_turns))];
    let corpus = apply_filters(corpus, &hooks)?;
    let written = write_dialogues(&args.output, &corpus.dialogues)
        .with_context(|| format!("writing {}", args.output.display()))?;
    tracing::info!(loaded, deduped, written, "ingest finished");
    write_meta(
        &args.output,
        "ingest",
        cfg,
        json!({ "loaded": loaded, "after_dedup": deduped, "written": written }),
    )?;
    write_errors(&args.output, &errors)?;
    Ok(Status::from_errors(&errors))
}
