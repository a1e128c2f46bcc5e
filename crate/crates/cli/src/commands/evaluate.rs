use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use usp_core::authenticity::{adv, ava, early_stop_trigger, esr, sem_sim, style_sim, AdvReport, AuthorPair, EarlyStopKind, EsrReport};
use usp_core::consistency::{dpc, mean_judge_score, persona_coverage, r_dpc, sc_score, val_score, ConsistencyReport, IdfTable, JudgeOutcome};
use usp_core::prompts::JudgePrompts;
use usp_core::{par_map, Dialogue, Gateway, UserProfile};

use super::{gateway, load_corpus, load_profiles};
use crate::config::RunConfig;
use crate::output::{write_errors, write_json, write_meta, ItemError};
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[value(name = "dpc")]
    Dpc,
    #[value(name = "r_dpc")]
    RDpc,
    #[value(name = "p_cover")]
    PCover,
    #[value(name = "sc_score")]
    ScScore,
    #[value(name = "val_score")]
    ValScore,
    #[value(name = "sem_sim")]
    SemSim,
    #[value(name = "style_sim")]
    StyleSim,
    #[value(name = "ava")]
    Ava,
    #[value(name = "adv")]
    Adv,
    #[value(name = "esr")]
    Esr,
}

impl Metric {
    fn needs_profile(self) -> bool {
        matches!(self, Metric::Dpc | Metric::RDpc | Metric::PCover | Metric::ScScore | Metric::ValScore)
    }

    fn needs_target(self) -> bool {
        matches!(self, Metric::SemSim | Metric::StyleSim | Metric::Ava | Metric::Adv)
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dialogue JSONL to score (simulated or golden).
    #[arg(long)]
    pub dialogues: PathBuf,
    /// Profile JSONL for the consistency metrics.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Golden dialogue JSONL for the authenticity metrics.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Comma-separated metrics to compute.
    #[arg(long, value_enum, value_delimiter = ',', required = true, num_args = 1..)]
    pub metrics: Vec<Metric>,
    /// Directory for evaluation.json, aggregate.csv and summary.json.
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Directory of replacement judge templates.
    #[arg(long)]
    pub prompt_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct DialogueEval {
    dialogue_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dpc: Option<ConsistencyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_dpc: Option<ConsistencyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_cover: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sc_score: Option<JudgeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_score: Option<JudgeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sem_sim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    style_sim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    early_stop: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    early_stop_kind: Option<EarlyStopKind>,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    metric: String,
    value: Option<f64>,
    count: usize,
}

#[derive(Debug, Serialize)]
struct AvaSummary {
    threshold: f64,
    accuracy: f64,
    pairs: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    dialogues: usize,
    metrics: Vec<Metric>,
    aggregate: Vec<AggregateRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    esr: Option<EsrReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adv: Option<AdvReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ava: Option<AvaSummary>,
}

struct Pairing<'a> {
    profiles: HashMap<&'a str, &'a UserProfile>,
    profiles_by_source: HashMap<&'a str, &'a UserProfile>,
    targets: HashMap<&'a str, &'a Dialogue>,
}

impl<'a> Pairing<'a> {
    fn new(profiles: &'a [UserProfile], targets: &'a [Dialogue]) -> Self {
        Pairing {
            profiles: profiles.iter().map(|p| (p.id.as_str(), p)).collect(),
            profiles_by_source: profiles
                .iter()
                .filter_map(|p| p.source_dialogue_id.as_deref().map(|s| (s, p)))
                .collect(),
            targets: targets.iter().map(|t| (t.id.as_str(), t)).collect(),
        }
    }

    /// `profile_id` meta, then a profile extracted from this dialogue, then a same-id profile.
    fn profile(&self, d: &Dialogue) -> Option<&'a UserProfile> {
        if let Some(id) = d.meta.get("profile_id") {
            return self.profiles.get(id.as_str()).copied();
        }
        self.profiles_by_source
            .get(d.id.as_str())
            .or_else(|| self.profiles.get(d.id.as_str()))
            .copied()
    }

    /// `target_id` meta, then the source dialogue of the paired profile, then a same-id dialogue.
    fn target(&self, d: &Dialogue) -> Option<&'a Dialogue> {
        if let Some(id) = d.meta.get("target_id") {
            return self.targets.get(id.as_str()).copied();
        }
        self.profile(d)
            .and_then(|p| p.source_dialogue_id.as_deref())
            .and_then(|s| self.targets.get(s))
            .or_else(|| self.targets.get(d.id.as_str()))
            .copied()
    }
}

struct Ctx<'a> {
    metrics: &'a [Metric],
    cfg: &'a RunConfig,
    gateway: &'a Gateway,
    prompts: &'a JudgePrompts,
    idf: &'a IdfTable,
}

fn eval_one(d: &Dialogue, p: Option<&UserProfile>, t: Option<&Dialogue>, cx: &Ctx) -> (DialogueEval, Vec<ItemError>) {
    let mut out = DialogueEval {
        dialogue_id: d.id.clone(),
        profile_id: p.map(|p| p.id.clone()),
        target_id: t.map(|t| t.id.clone()),
        ..DialogueEval::default()
    };
    let mut errors = Vec::new();
    let mapping = cx.cfg.metrics.verdict_mapping;
    for &m in cx.metrics {
        let item = |e: &dyn std::fmt::Display| ItemError::new(&d.id, format!("{}: {e}", metric_name(m)));
        if m.needs_profile() && p.is_none() {
            errors.push(item(&"no paired profile"));
            continue;
        }
        if m.needs_target() && t.is_none() {
            if m != Metric::Ava && m != Metric::Adv {
                errors.push(item(&"no paired target dialogue"));
            }
            continue;
        }
        let r: Result<(), String> = match m {
            Metric::Dpc => dpc(d, p.unwrap(), mapping, cx.gateway, cx.prompts).map(|r| out.dpc = Some(r)).map_err(|e| e.to_string()),
            Metric::RDpc => r_dpc(p.unwrap(), d, mapping, cx.gateway, cx.prompts).map(|r| out.r_dpc = Some(r)).map_err(|e| e.to_string()),
            Metric::PCover => persona_coverage(p.unwrap(), d, Some(cx.idf)).map(|v| out.p_cover = Some(v)).map_err(|e| e.to_string()),
            Metric::ScScore => sc_score(p.unwrap(), d, cx.gateway, cx.prompts).map(|v| out.sc_score = Some(v)).map_err(|e| e.to_string()),
            Metric::ValScore => val_score(d, p.unwrap(), cx.gateway, cx.prompts).map(|v| out.val_score = Some(v)).map_err(|e| e.to_string()),
            Metric::SemSim => sem_sim(&d.user_text(), &t.unwrap().user_text(), cx.gateway)
                .map(|s| out.sem_sim = Some(s.value))
                .map_err(|e| e.to_string()),
            Metric::StyleSim => style_sim(&d.user_text(), &t.unwrap().user_text(), cx.gateway)
                .map(|s| out.style_sim = Some(s.value))
                .map_err(|e| e.to_string()),
            Metric::Esr => {
                let kind = early_stop_trigger(d, cx.cfg.metrics.esr_threshold);
                out.early_stop = Some(kind.is_some());
                out.early_stop_kind = kind;
                Ok(())
            }
            Metric::Ava | Metric::Adv => Ok(()),
        };
        if let Err(e) = r {
            errors.push(item(&e));
        }
    }
    (out, errors)
}

fn metric_name(m: Metric) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        (None, 0)
    } else {
        (Some(v.iter().sum::<f64>() / v.len() as f64), v.len())
    }
}

fn row(metric: &str, (value, count): (Option<f64>, usize)) -> AggregateRow {
    AggregateRow {
        metric: metric.to_string(),
        value,
        count,
    }
}

pub fn run(args: Args, cfg: &mut RunConfig) -> Result<Status> {
    let mut metrics = args.metrics.clone();
    metrics.sort();
    metrics.dedup();
    if metrics.is_empty() {
        bail!("no metrics selected; pass --metrics with at least one of dpc, r_dpc, p_cover, sc_score, val_score, sem_sim, style_sim, ava, adv, esr");
    }
    if metrics.iter().any(|m| m.needs_profile()) && args.profiles.is_none() {
        bail!("the selected consistency metrics need --profiles");
    }
    if metrics.iter().any(|m| m.needs_target()) && args.targets.is_none() {
        bail!("the selected authenticity metrics need --targets");
    }
    let prompts = match &args.prompt_dir {
        Some(dir) => JudgePrompts::from_dir(dir).context("loading judge templates")?,
        None => JudgePrompts::default(),
    };
    let g = gateway(cfg)?;
    let mut errors = Vec::new();
    let corpus = load_corpus(&args.dialogues, &mut errors)?;
    let profiles = match &args.profiles {
        Some(p) => load_profiles(p)?,
        None => Vec::new(),
    };
    let targets = match &args.targets {
        Some(t) => load_corpus(t, &mut errors)?.dialogues,
        None => Vec::new(),
    };
    let pairing = Pairing::new(&profiles, &targets);
    let idf = IdfTable::from_dialogues(&corpus.dialogues);
    let cx = Ctx {
        metrics: &metrics,
        cfg,
        gateway: &g,
        prompts: &prompts,
        idf: &idf,
    };
    let results = par_map(&corpus.dialogues, |d| eval_one(d, pairing.profile(d), pairing.target(d), &cx));
    let mut evals = Vec::with_capacity(results.len());
    for (e, errs) in results {
        evals.push(e);
        errors.extend(errs);
    }

    let pairs: Vec<(&Dialogue, &Dialogue)> = corpus
        .dialogues
        .iter()
        .filter_map(|d| pairing.target(d).map(|t| (d, t)))
        .collect();
    let mut aggregate = Vec::new();
    let mut summary = Summary {
        dialogues: corpus.len(),
        metrics: metrics.clone(),
        aggregate: Vec::new(),
        esr: None,
        adv: None,
        ava: None,
    };
    for &m in &metrics {
        match m {
            Metric::Dpc | Metric::RDpc => {
                let name = metric_name(m);
                let reports: Vec<&ConsistencyReport> = evals
                    .iter()
                    .filter_map(|e| if m == Metric::Dpc { e.dpc.as_ref() } else { e.r_dpc.as_ref() })
                    .collect();
                aggregate.push(row(&name, mean(reports.iter().map(|r| r.dpc))));
                aggregate.push(row(&format!("{name}_precision"), mean(reports.iter().map(|r| r.dp_p))));
                aggregate.push(row(&format!("{name}_recall"), mean(reports.iter().map(|r| r.dp_r))));
            }
            Metric::PCover => aggregate.push(row("p_cover", mean(evals.iter().filter_map(|e| e.p_cover)))),
            Metric::ScScore | Metric::ValScore => {
                let outcomes: Vec<JudgeOutcome> = evals
                    .iter()
                    .filter_map(|e| if m == Metric::ScScore { e.sc_score.clone() } else { e.val_score.clone() })
                    .collect();
                let scored = outcomes.iter().filter(|o| o.score().is_some()).count();
                aggregate.push(row(&metric_name(m), (mean_judge_score(&outcomes), scored)));
            }
            Metric::SemSim => aggregate.push(row("sem_sim", mean(evals.iter().filter_map(|e| e.sem_sim)))),
            Metric::StyleSim => aggregate.push(row("style_sim", mean(evals.iter().filter_map(|e| e.style_sim)))),
            Metric::Esr => match esr(&corpus.dialogues, cfg.metrics.esr_threshold) {
                Ok(r) => {
                    aggregate.push(row("esr", (Some(r.rate), r.total)));
                    summary.esr = Some(r);
                }
                Err(e) => {
                    errors.push(ItemError::new("esr", e));
                    aggregate.push(row("esr", (None, 0)));
                }
            },
            Metric::Ava => {
                let mut author_pairs = Vec::new();
                for (i, (d, t)) in pairs.iter().enumerate() {
                    author_pairs.push(AuthorPair::new(d.user_text(), t.user_text(), true));
                    if pairs.len() > 1 {
                        let other = pairs[(i + 1) % pairs.len()].1;
                        author_pairs.push(AuthorPair::new(d.user_text(), other.user_text(), false));
                    }
                }
                let threshold = cfg.metrics.ava_threshold;
                match ava(&author_pairs, threshold, &g) {
                    Ok(acc) => {
                        aggregate.push(row("ava", (Some(acc), author_pairs.len())));
                        summary.ava = Some(AvaSummary {
                            threshold,
                            accuracy: acc,
                            pairs: author_pairs.len(),
                        });
                    }
                    Err(e) => {
                        errors.push(ItemError::new("ava", e));
                        aggregate.push(row("ava", (None, 0)));
                    }
                }
            }
            Metric::Adv => {
                let (gen, tgt): (Vec<Dialogue>, Vec<Dialogue>) =
                    pairs.iter().map(|(d, t)| ((*d).clone(), (*t).clone())).unzip();
                match adv(&gen, &tgt, cfg.metrics.adv_dims, &g) {
                    Ok(r) => {
                        aggregate.push(row("adv", (Some(r.mean), r.distances.len())));
                        summary.adv = Some(r);
                    }
                    Err(e) => {
                        errors.push(ItemError::new("adv", e));
                        aggregate.push(row("adv", (None, 0)));
                    }
                }
            }
        }
    }

    std::fs::create_dir_all(&args.output_dir).with_context(|| format!("creating {}", args.output_dir.display()))?;
    let eval_path = args.output_dir.join("evaluation.json");
    write_json(&eval_path, &evals)?;
    let csv_path = args.output_dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for r in &aggregate {
        w.serialize(r)?;
    }
    w.flush()?;
    summary.aggregate = aggregate;
    write_json(&args.output_dir.join("summary.json"), &summary)?;
    let metric_names: Vec<String> = metrics.iter().map(|&m| metric_name(m)).collect();
    let per_metric: BTreeMap<String, usize> = BTreeMap::from([("pairs_with_target".to_string(), pairs.len())]);
    write_meta(&eval_path, "evaluate", cfg, json!({ "metrics": metric_names, "counts": per_metric }))?;
    write_errors(&eval_path, &errors)?;
    Ok(Status::from_errors(&errors))
}
