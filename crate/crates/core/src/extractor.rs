//! Implicit-profile extraction.
//!
//! Stage one asks the chat backend for three attribute groups (scene-consistent
//! facts, scene-related goals and tasks, Big Five traits), each with its own
//! prompt. The groups are merged, invalid entries and inconclusive traits are
//! dropped, and list entries are shuffled by seed. Stage two polishes the
//! attributes into a second-person narrative of two paragraphs: objective
//! facts first, subjective characteristics second.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::corpus::Dialogue;
use crate::gateway::{ChatRequest, Gateway, GatewayError, Task};
use crate::prompts::ExtractionPrompts;
use crate::text::{seeded_hash, words};

pub const SCENE_CONSISTENT_FIELDS: [&str; 10] = [
    "age",
    "gender",
    "location",
    "occupation",
    "education",
    "family_relationships",
    "routines_or_habits",
    "social_relationships",
    "other_experiences",
    "language_style",
];

pub const BIG_FIVE: [&str; 5] = [
    "Openness",
    "Conscientiousness",
    "Extraversion",
    "Agreeableness",
    "Neuroticism",
];

/// Entries treated as "nothing extracted" (compared trimmed, case-insensitively).
pub const INVALID_ENTRIES: [&str; 5] = ["", "n/a", "unknown", "[]", "none"];

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not parse {category:?} response as JSON")]
    SchemaParse { category: Category, raw: String },
    #[error("category {0:?} supplied more than once")]
    DuplicateCategory(Category),
    #[error("polished narrative is missing a paragraph")]
    EmptyNarrative { raw: String },
    #[error("dialogue {0} has no user turns")]
    NoUserTurns(String),
    #[error("profile store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile store line {line}: {message}")]
    Store { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    SceneConsistent,
    SceneRelated,
    Personality,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::SceneConsistent,
        Category::SceneRelated,
        Category::Personality,
    ];

    fn task(self) -> Task {
        match self {
            Category::SceneConsistent => Task::ExtractSceneConsistent,
            Category::SceneRelated => Task::ExtractSceneRelated,
            Category::Personality => Task::ExtractPersonality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraitScore {
    High,
    Low,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitAssessment {
    pub score: TraitScore,
    #[serde(default)]
    pub conclusion: String,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub goals_or_plans: String,
    pub task_details: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    #[serde(default)]
    pub scene_consistent: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub scene_related: Vec<Scenario>,
    #[serde(default)]
    pub big_five: BTreeMap<String, TraitAssessment>,
}

impl AttributeSet {
    pub fn is_empty(&self) -> bool {
        self.scene_consistent.values().all(Vec::is_empty)
            && self.scene_related.is_empty()
            && self.big_five.is_empty()
    }

    /// Every string value, in serialization order.
    pub fn strings(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.scene_consistent.values().flatten().map(String::as_str).collect();
        for s in &self.scene_related {
            out.push(&s.goals_or_plans);
            out.extend(s.task_details.iter().map(String::as_str));
        }
        for t in self.big_five.values() {
            out.push(&t.conclusion);
            out.push(&t.reason);
        }
        out
    }
}

/// One category's extraction result plus any field-level parse warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAttributes {
    pub category: Category,
    pub attrs: AttributeSet,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub attributes: AttributeSet,
    /// Objective-facts paragraph.
    pub narrative_of: String,
    /// Subjective-characteristics paragraph.
    pub narrative_sc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dialogue_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl UserProfile {
    /// Narrative-only profile, as produced by hand or by another tool.
    pub fn from_narratives(id: impl Into<String>, of: impl Into<String>, sc: impl Into<String>) -> Self {
        UserProfile {
            id: id.into(),
            attributes: AttributeSet::default(),
            narrative_of: of.into(),
            narrative_sc: sc.into(),
            source_dialogue_id: None,
            meta: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    /// Both paragraphs separated by a blank line.
    pub fn full_narrative(&self) -> String {
        format!("{}\n\n{}", self.narrative_of, self.narrative_sc)
    }

    pub fn has_narratives(&self) -> bool {
        !self.narrative_of.trim().is_empty() && !self.narrative_sc.trim().is_empty()
    }
}

/// Pulls the outermost JSON object out of a reply that may carry code fences
/// or chatter around it.
pub(crate) fn json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&raw[start..=end]).ok()? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

fn string_list(v: &Value, field: &str, warnings: &mut Vec<String>) -> Vec<String> {
    match v {
        Value::Null => Vec::new(),
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items
            .iter()
            .filter_map(|i| match i {
                Value::String(s) => Some(s.clone()),
                other => {
                    warnings.push(format!("{field}: ignored non-string entry {other}"));
                    None
                }
            })
            .collect(),
        other => {
            warnings.push(format!("{field}: expected a list, got {other}"));
            Vec::new()
        }
    }
}

fn parse_category(category: Category, raw: &str) -> Result<PartialAttributes, ExtractError> {
    let obj = json_object(raw).ok_or_else(|| ExtractError::SchemaParse {
        category,
        raw: raw.to_string(),
    })?;
    let mut warnings = Vec::new();
    let mut attrs = AttributeSet::default();
    match category {
        Category::SceneConsistent => {
            for (k, v) in &obj {
                if SCENE_CONSISTENT_FIELDS.contains(&k.as_str()) {
                    let list = string_list(v, k, &mut warnings);
                    attrs.scene_consistent.insert(k.clone(), list);
                } else {
                    warnings.push(format!("unknown field {k}"));
                }
            }
        }
        Category::SceneRelated => {
            let scenarios = obj.get("scenarios").cloned().unwrap_or(Value::Null);
            let items = match scenarios {
                Value::Array(items) => items,
                Value::Null => Vec::new(),
                other => {
                    warnings.push(format!("scenarios: expected a list, got {other}"));
                    Vec::new()
                }
            };
            for item in items {
                let Value::Object(s) = item else {
                    warnings.push("scenarios: ignored non-object entry".into());
                    continue;
                };
                let goals = string_list(s.get("goals_or_plans").unwrap_or(&Value::Null), "goals_or_plans", &mut warnings);
                let tasks = string_list(s.get("task_details").unwrap_or(&Value::Null), "task_details", &mut warnings);
                attrs.scene_related.push(Scenario {
                    goals_or_plans: goals.join(" "),
                    task_details: tasks,
                });
            }
        }
        Category::Personality => {
            for (k, v) in &obj {
                let Some(name) = BIG_FIVE.iter().find(|t| t.eq_ignore_ascii_case(k)) else {
                    warnings.push(format!("unknown trait {k}"));
                    continue;
                };
                let field = |f: &str| v.get(f).and_then(Value::as_str).unwrap_or("").to_string();
                let score = match field("score").trim().to_ascii_lowercase().as_str() {
                    "high" => TraitScore::High,
                    "low" => TraitScore::Low,
                    "inconclusive" => TraitScore::Inconclusive,
                    other => {
                        warnings.push(format!("{name}: unrecognized score {other:?}"));
                        TraitScore::Inconclusive
                    }
                };
                attrs.big_five.insert(
                    (*name).to_string(),
                    TraitAssessment {
                        score,
                        conclusion: field("conclusion"),
                        reason: field("reason"),
                    },
                );
            }
        }
    }
    for w in &warnings {
        warn!(?category, "{w}");
    }
    Ok(PartialAttributes {
        category,
        attrs,
        warnings,
    })
}

fn user_turns_json(d: &Dialogue) -> String {
    let turns: Vec<&str> = d.user_turns().map(|t| t.text.as_str()).collect();
    serde_json::to_string(&turns).expect("strings serialize")
}

/// Runs one category prompt over the dialogue and parses its JSON reply.
pub fn extract_attributes(
    d: &Dialogue,
    category: Category,
    gateway: &Gateway,
    prompts: &ExtractionPrompts,
    seed: Option<u64>,
) -> Result<PartialAttributes, ExtractError> {
    if d.user_turn_count() == 0 {
        return Err(ExtractError::NoUserTurns(d.id.clone()));
    }
    let template = match category {
        Category::SceneConsistent => &prompts.scene_consistent,
        Category::SceneRelated => &prompts.scene_related,
        Category::Personality => &prompts.personality,
    };
    let transcript = d.transcript();
    let req = ChatRequest::prompt(category.task(), template.render(&[("dialogue", &transcript)]))
        .with_seed(seed)
        .with_slot("dialogue", transcript)
        .with_slot("user_turns", user_turns_json(d));
    let raw = gateway.complete(&req)?;
    parse_category(category, &raw)
}

fn is_valid_entry(s: &str) -> bool {
    let t = s.trim().to_lowercase();
    !INVALID_ENTRIES.contains(&t.as_str())
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeded_hash(seed, label.as_bytes()))
}

/// Unions one partial set per category, drops invalid entries and inconclusive
/// traits, and shuffles every list deterministically by `seed`.
pub fn merge_and_filter(parts: &[PartialAttributes], seed: u64) -> Result<AttributeSet, ExtractError> {
    let mut seen = HashSet::new();
    for p in parts {
        if !seen.insert(p.category) {
            return Err(ExtractError::DuplicateCategory(p.category));
        }
    }
    let mut out = AttributeSet::default();
    for p in parts {
        for (field, values) in &p.attrs.scene_consistent {
            let mut kept: Vec<String> = values.iter().filter(|v| is_valid_entry(v)).cloned().collect();
            kept.shuffle(&mut rng_for(seed, field));
            if !kept.is_empty() {
                out.scene_consistent.insert(field.clone(), kept);
            }
        }
        for s in &p.attrs.scene_related {
            let goals = if is_valid_entry(&s.goals_or_plans) {
                s.goals_or_plans.clone()
            } else {
                String::new()
            };
            let tasks: Vec<String> = s.task_details.iter().filter(|t| is_valid_entry(t)).cloned().collect();
            if goals.is_empty() && tasks.is_empty() {
                continue;
            }
            out.scene_related.push(Scenario {
                goals_or_plans: goals,
                task_details: tasks,
            });
        }
        for (name, t) in &p.attrs.big_five {
            if t.score != TraitScore::Inconclusive {
                out.big_five.insert(name.clone(), t.clone());
            }
        }
    }
    for (i, s) in out.scene_related.iter_mut().enumerate() {
        s.task_details.shuffle(&mut rng_for(seed, &format!("task_details/{i}")));
    }
    out.scene_related.shuffle(&mut rng_for(seed, "scenarios"));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Narrative {
    pub narrative_of: String,
    pub narrative_sc: String,
    pub warnings: Vec<String>,
}

/// Splits on the first blank line: objective facts before, subjective after.
pub fn split_paragraphs(raw: &str) -> (String, String) {
    let text = raw.replace("\r\n", "\n");
    let text = text.trim();
    let mut first = Vec::new();
    let mut lines = text.lines();
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        first.push(line);
    }
    let rest: Vec<&str> = lines.collect();
    (first.join("\n").trim().to_string(), rest.join("\n").trim().to_string())
}

pub fn polish(
    attrs: &AttributeSet,
    gateway: &Gateway,
    prompts: &ExtractionPrompts,
    seed: Option<u64>,
) -> Result<Narrative, ExtractError> {
    let compact = serde_json::to_string(attrs).expect("attributes serialize");
    let pretty = serde_json::to_string_pretty(attrs).expect("attributes serialize");
    let req = ChatRequest::prompt(Task::Polish, prompts.polish.render(&[("attributes", &pretty)]))
        .with_seed(seed)
        .with_slot("attributes", compact);
    let raw = gateway.complete(&req)?;
    let (of, sc) = split_paragraphs(&raw);
    if of.is_empty() || sc.is_empty() {
        return Err(ExtractError::EmptyNarrative { raw });
    }
    let mut warnings = Vec::new();
    if !words(&raw).any(|w| w == "you" || w == "your") {
        warnings.push("narrative is not written in the second person".to_string());
    }
    Ok(Narrative {
        narrative_of: of,
        narrative_sc: sc,
        warnings,
    })
}

/// Full two-stage extraction for one dialogue.
pub fn extract_profile(
    d: &Dialogue,
    gateway: &Gateway,
    prompts: &ExtractionPrompts,
    seed: u64,
) -> Result<UserProfile, ExtractError> {
    if d.user_turn_count() == 0 {
        return Err(ExtractError::NoUserTurns(d.id.clone()));
    }
    let parts = Category::ALL
        .iter()
        .map(|&c| extract_attributes(d, c, gateway, prompts, Some(seed)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut warnings: Vec<String> = parts.iter().flat_map(|p| p.warnings.iter().cloned()).collect();
    let attributes = merge_and_filter(&parts, seed)?;
    let narrative = polish(&attributes, gateway, prompts, Some(seed))?;
    warnings.extend(narrative.warnings);
    Ok(UserProfile {
        id: d.id.clone(),
        attributes,
        narrative_of: narrative.narrative_of,
        narrative_sc: narrative.narrative_sc,
        source_dialogue_id: Some(d.id.clone()),
        meta: BTreeMap::new(),
        warnings,
    })
}

/// Anything that can turn a dialogue back into a profile. The reward loop
/// uses this to re-extract profiles from simulated dialogues.
pub trait ProfileExtractor: Send + Sync {
    fn extract(&self, d: &Dialogue) -> Result<UserProfile, ExtractError>;
}

#[derive(Debug, Clone)]
pub struct LlmExtractor {
    pub gateway: Gateway,
    pub prompts: ExtractionPrompts,
    pub seed: u64,
}

impl ProfileExtractor for LlmExtractor {
    fn extract(&self, d: &Dialogue) -> Result<UserProfile, ExtractError> {
        extract_profile(d, &self.gateway, &self.prompts, self.seed)
    }
}

// ---- profile store (JSONL, one UserProfile per line) ----

pub fn write_profiles<'a>(
    path: impl AsRef<Path>,
    profiles: impl IntoIterator<Item = &'a UserProfile>,
) -> Result<usize, ExtractError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for p in profiles {
        writeln!(w, "{}", serde_json::to_string(p).expect("profiles serialize"))?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<UserProfile>, ExtractError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExtractError::Store {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
