use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde_json::json;
use usp_core::extractor::write_profiles;
use usp_core::sampler::{
    embed_profiles, fit_kde, ldl, reduce, sample_majority, sample_minority, select_dissimilar, synthesize_virtual,
    uniformity_loss, ReduceMethod,
};
use usp_core::UserProfile;

use super::{gateway, load_profiles};
use crate::config::{Reducer, RunConfig};
use crate::output::{write_errors, write_json, write_meta, ItemError};
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Strategy {
    /// Highest-density profiles.
    Major,
    /// Density-weighted draw favoring sparse regions.
    Minor,
    /// Recombine each profile's objective facts with a neighbor's subjective traits.
    Virtual,
    /// Profiles least similar to a reference set.
    Dissimilar,
}

impl Strategy {
    fn as_str(self) -> &'static str {
        match self {
            Strategy::Major => "major",
            Strategy::Minor => "minor",
            Strategy::Virtual => "virtual",
            Strategy::Dissimilar => "dissimilar",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Profile JSONL to sample from.
    #[arg(long)]
    pub profiles: PathBuf,
    /// Sampled profile JSONL.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Number of profiles to produce.
    #[arg(long)]
    pub n: usize,
    /// Neighbors considered per profile for virtual synthesis.
    #[arg(long)]
    pub k: Option<usize>,
    /// Reduced dimension for density estimation.
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long, value_enum)]
    pub reducer: Option<Reducer>,
    /// Fixed KDE bandwidth; Scott's rule when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Reference profile JSONL for the dissimilar strategy.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Also write the fitted density model as JSON.
    #[arg(long)]
    pub model_output: Option<PathBuf>,
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    if let Some(k) = args.k {
        cfg.sampler.k = k;
    }
    if let Some(d) = args.dims {
        cfg.sampler.dims = d;
    }
    if let Some(r) = args.reducer {
        cfg.sampler.reducer = r;
    }
    if args.bandwidth.is_some() {
        cfg.sampler.bandwidth = args.bandwidth;
    }
    if args.strategy == Strategy::Dissimilar && args.references.is_none() {
        bail!("--strategy dissimilar needs --references");
    }
    let g = gateway(cfg)?;
    let profiles = load_profiles(&args.profiles)?;
    let errors: Vec<ItemError> = Vec::new();
    let mut params = json!({ "strategy": args.strategy.as_str(), "n": args.n });

    let sampled: Vec<UserProfile> = match args.strategy {
        Strategy::Major | Strategy::Minor => {
            let vectors = embed_profiles(&profiles, &g)?;
            let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
            let method = match cfg.sampler.reducer {
                Reducer::Pca => ReduceMethod::Pca,
                Reducer::NeighborGraph => ReduceMethod::NeighborGraph {
                    neighbors: cfg.sampler.graph_neighbors,
                    epochs: cfg.sampler.graph_epochs,
                    seed: cfg.seed,
                },
            };
            let reduced = reduce(&ids, &vectors, cfg.sampler.dims, method).context("reducing embeddings")?;
            let model = fit_kde(reduced, cfg.sampler.bandwidth).context("fitting density model")?;
            params["bandwidth"] = json!(model.bandwidth);
            if let Some(path) = &args.model_output {
                write_json(path, &model)?;
            }
            if args.strategy == Strategy::Major {
                sample_majority(&model, &profiles, args.n)?
            } else {
                sample_minority(&model, &profiles, args.n, cfg.seed)?
            }
        }
        Strategy::Virtual => {
            let vectors = embed_profiles(&profiles, &g)?;
            synthesize_virtual(&profiles, &vectors, args.n, cfg.sampler.k, cfg.seed)?.into_iter().map(|v| v.profile).collect()
        }
        Strategy::Dissimilar => {
            let refs = load_profiles(args.references.as_ref().expect("checked above"))?;
            select_dissimilar(&profiles, &refs, args.n, &g)?
                .into_iter()
                .map(|(mut p, score)| {
                    p.meta.insert("max_reference_similarity".into(), format!("{score:.6}"));
                    p
                })
                .collect()
        }
    };

    if sampled.len() > 1 {
        let vectors = embed_profiles(&sampled, &g)?;
        if let Ok(v) = ldl(&vectors, cfg.sampler.ldl_k.min(sampled.len() - 1)) {
            params["ldl"] = json!(v);
        }
        if let Ok(v) = uniformity_loss(&vectors) {
            params["uniformity_loss"] = json!(v);
        }
    }
    params["written"] = json!(sampled.len());
    write_profiles(&args.output, &sampled).with_context(|| format!("writing {}", args.output.display()))?;
    write_meta(&args.output, "sample", cfg, params)?;
    write_errors(&args.output, &errors)?;
    Ok(Status::from_errors(&errors))
}
