//! Dialogue/profile consistency metrics.
//!
//! Fact-level consistency decomposes a target into atomic facts and asks an
//! NLI judge whether each fact is supported by a source text; `Fact.Con` is
//! the mean mapped verdict. Profile precision (profile facts judged against the
//! dialogue) and recall (user utterances judged against the profile) combine
//! into their harmonic mean. The reversed variants score a simulated dialogue
//! against the profile that conditioned it.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::corpus::Dialogue;
use crate::extractor::{json_object, UserProfile};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Task};
use crate::prompts::JudgePrompts;
use crate::text::{content_words, words};

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("decomposition produced no facts")]
    EmptyDecomposition { raw: String },
    #[error("dialogue {0} has no user turns")]
    NoUserTurns(String),
    #[error("no facts to score")]
    NoFacts,
    #[error("profile yields no keywords")]
    EmptyKeywordSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactOrigin {
    ProfileDecomposition,
    UserUtterance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub text: String,
    pub origin: FactOrigin,
    pub index: usize,
}

impl AtomicFact {
    pub fn new(text: impl Into<String>, origin: FactOrigin, index: usize) -> Self {
        AtomicFact {
            text: text.into(),
            origin,
            index,
        }
    }
}

/// Each user utterance counts as one fact.
pub fn utterance_facts(d: &Dialogue) -> Vec<AtomicFact> {
    d.user_turns()
        .enumerate()
        .map(|(i, t)| AtomicFact::new(t.text.clone(), FactOrigin::UserUtterance, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Consistent,
    Ambiguous,
    Conflict,
}

impl Verdict {
    pub fn raw(self) -> i64 {
        match self {
            Verdict::Consistent => 1,
            Verdict::Ambiguous => 0,
            Verdict::Conflict => -1,
        }
    }

    pub fn from_raw(raw: i64) -> Option<Verdict> {
        match raw {
            1 => Some(Verdict::Consistent),
            0 => Some(Verdict::Ambiguous),
            -1 => Some(Verdict::Conflict),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub verdict: Verdict,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// How a verdict enters the Fact.Con mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictMapping {
    /// Consistent 1, otherwise 0.
    #[default]
    Strict,
    /// Consistent 1, Ambiguous 0.5, Conflict 0.
    HalfCredit,
    /// Consistent 1, Ambiguous 0, Conflict -1, mean floored at 0.
    SignedFloored,
}

impl VerdictMapping {
    pub fn value(self, v: Verdict) -> f64 {
        match (self, v) {
            (_, Verdict::Consistent) => 1.0,
            (VerdictMapping::HalfCredit, Verdict::Ambiguous) => 0.5,
            (VerdictMapping::SignedFloored, Verdict::Conflict) => -1.0,
            _ => 0.0,
        }
    }
}

/// Which prompt frames the NLI question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// A profile fact is the target, the dialogue the source.
    ProfileGivenDialogue,
    /// A user utterance is the target, the profile the source.
    DialogueGivenProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub facts: Vec<AtomicFact>,
    pub raw: String,
}

fn parse_fact_list(raw: &str) -> Vec<String> {
    if let (Some(s), Some(e)) = (raw.find('['), raw.rfind(']')) {
        if s < e {
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&raw[s..=e]) {
                return items
                    .into_iter()
                    .filter_map(|v| v.as_str().map(|t| t.trim().to_string()))
                    .filter(|t| !t.is_empty())
                    .collect();
            }
        }
    }
    raw.lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit())
                .trim_start_matches(['.', ')'])
                .trim()
                .to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Splits a profile narrative into declarative atomic facts. Replies that are
/// not a JSON array fall back to one fact per non-empty line.
pub fn decompose_facts(
    text: &str,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<Decomposition, ConsistencyError> {
    if text.trim().is_empty() {
        return Err(ConsistencyError::EmptyInput("profile text"));
    }
    let req = ChatRequest::prompt(Task::Decompose, prompts.decompose.render(&[("text", text)]))
        .with_slot("text", text);
    let raw = gateway.complete(&req)?;
    let facts: Vec<AtomicFact> = parse_fact_list(&raw)
        .into_iter()
        .enumerate()
        .map(|(i, t)| AtomicFact::new(t, FactOrigin::ProfileDecomposition, i))
        .collect();
    if facts.is_empty() {
        return Err(ConsistencyError::EmptyDecomposition { raw });
    }
    Ok(Decomposition { facts, raw })
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads `{"score": 1|0|-1, "reason": ...}`. Anything else is Ambiguous with a warning.
pub fn parse_nli(raw: &str) -> NliVerdict {
    let ambiguous = |warning: String| {
        warn!("{warning}");
        NliVerdict {
            verdict: Verdict::Ambiguous,
            reason: String::new(),
            warning: Some(warning),
        }
    };
    let Some(obj) = json_object(raw) else {
        return ambiguous(format!("unparseable NLI reply: {raw}"));
    };
    let reason = obj.get("reason").and_then(Value::as_str).unwrap_or("").to_string();
    let score = obj.get("score").and_then(as_number);
    match score.filter(|s| s.fract() == 0.0).and_then(|s| Verdict::from_raw(s as i64)) {
        Some(verdict) => NliVerdict {
            verdict,
            reason,
            warning: None,
        },
        None => NliVerdict {
            reason,
            ..ambiguous(format!("NLI score out of range: {:?}", obj.get("score")))
        },
    }
}

pub fn nli_score(
    source: &str,
    fact: &AtomicFact,
    direction: Direction,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<NliVerdict, ConsistencyError> {
    if source.trim().is_empty() {
        return Err(ConsistencyError::EmptyInput("NLI source"));
    }
    let template = match direction {
        Direction::ProfileGivenDialogue => &prompts.nli_profile_target,
        Direction::DialogueGivenProfile => &prompts.nli_dialogue_target,
    };
    let req = ChatRequest::prompt(
        Task::Nli,
        template.render(&[("source", source), ("target", &fact.text)]),
    )
    .with_slot("source", source)
    .with_slot("target", fact.text.as_str());
    Ok(parse_nli(&gateway.complete(&req)?))
}

/// Mean mapped verdict; `None` for an empty list.
pub fn fact_con_from_verdicts(verdicts: &[Verdict], mapping: VerdictMapping) -> Option<f64> {
    if verdicts.is_empty() {
        return None;
    }
    let mean = verdicts.iter().map(|&v| mapping.value(v)).sum::<f64>() / verdicts.len() as f64;
    Some(mean.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub fact: AtomicFact,
    pub verdict: NliVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCon {
    pub score: f64,
    pub verdicts: Vec<FactVerdict>,
}

/// Judges every fact against `source` and averages the mapped verdicts.
pub fn fact_con(
    source: &str,
    facts: &[AtomicFact],
    direction: Direction,
    mapping: VerdictMapping,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<FactCon, ConsistencyError> {
    if facts.is_empty() {
        return Err(ConsistencyError::NoFacts);
    }
    let verdicts = crate::par_map(facts, |f| nli_score(source, f, direction, gateway, prompts))
        .into_iter()
        .zip(facts)
        .map(|(v, f)| {
            v.map(|verdict| FactVerdict {
                fact: f.clone(),
                verdict,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<Verdict> = verdicts.iter().map(|v| v.verdict.verdict).collect();
    Ok(FactCon {
        score: fact_con_from_verdicts(&raw, mapping).expect("facts are non-empty"),
        verdicts,
    })
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// Profile scored against the dialogue it was extracted from.
    Forward,
    /// Simulated dialogue scored against its conditioning profile.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub kind: ReportKind,
    pub dialogue_id: String,
    pub profile_id: String,
    pub dp_p: f64,
    pub dp_r: f64,
    pub dpc: f64,
    pub profile_fact_count: usize,
    pub utterance_fact_count: usize,
    pub profile_verdicts: Vec<FactVerdict>,
    pub utterance_verdicts: Vec<FactVerdict>,
}

struct Sides {
    profile_side: FactCon,
    utterance_side: FactCon,
    profile_fact_count: usize,
    utterance_fact_count: usize,
}

fn score_both_sides(
    d: &Dialogue,
    p: &UserProfile,
    mapping: VerdictMapping,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<Sides, ConsistencyError> {
    if d.user_turn_count() == 0 {
        return Err(ConsistencyError::NoUserTurns(d.id.clone()));
    }
    if !p.has_narratives() {
        return Err(ConsistencyError::EmptyInput("profile narrative"));
    }
    let profile_text = p.full_narrative();
    let dialogue_text = d.user_transcript();
    let profile_facts = decompose_facts(&profile_text, gateway, prompts)?.facts;
    let utterances = utterance_facts(d);
    let profile_side = fact_con(
        &dialogue_text,
        &profile_facts,
        Direction::ProfileGivenDialogue,
        mapping,
        gateway,
        prompts,
    )?;
    let utterance_side = fact_con(
        &profile_text,
        &utterances,
        Direction::DialogueGivenProfile,
        mapping,
        gateway,
        prompts,
    )?;
    Ok(Sides {
        profile_side,
        utterance_side,
        profile_fact_count: profile_facts.len(),
        utterance_fact_count: utterances.len(),
    })
}

/// Profile precision (profile facts supported by the dialogue), recall (user
/// utterances supported by the profile), and their harmonic mean.
pub fn dpc(
    d: &Dialogue,
    p: &UserProfile,
    mapping: VerdictMapping,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<ConsistencyReport, ConsistencyError> {
    let s = score_both_sides(d, p, mapping, gateway, prompts)?;
    let (dp_p, dp_r) = (s.profile_side.score, s.utterance_side.score);
    Ok(ConsistencyReport {
        kind: ReportKind::Forward,
        dialogue_id: d.id.clone(),
        profile_id: p.id.clone(),
        dp_p,
        dp_r,
        dpc: harmonic(dp_p, dp_r),
        profile_fact_count: s.profile_fact_count,
        utterance_fact_count: s.utterance_fact_count,
        profile_verdicts: s.profile_side.verdicts,
        utterance_verdicts: s.utterance_side.verdicts,
    })
}

/// Reversed variant: the profile is ground truth. Precision asks whether each
/// simulated utterance is supported by the profile; recall asks whether each
/// profile fact surfaces in the simulated dialogue.
pub fn r_dpc(
    p: &UserProfile,
    d_sim: &Dialogue,
    mapping: VerdictMapping,
    gateway: &Gateway,
    prompts: &JudgePrompts,
) -> Result<ConsistencyReport, ConsistencyError> {
    let s = score_both_sides(d_sim, p, mapping, gateway, prompts)?;
    let (dp_p, dp_r) = (s.utterance_side.score, s.profile_side.score);
    Ok(ConsistencyReport {
        kind: ReportKind::Reversed,
        dialogue_id: d_sim.id.clone(),
        profile_id: p.id.clone(),
        dp_p,
        dp_r,
        dpc: harmonic(dp_p, dp_r),
        profile_fact_count: s.profile_fact_count,
        utterance_fact_count: s.utterance_fact_count,
        profile_verdicts: s.profile_side.verdicts,
        utterance_verdicts: s.utterance_side.verdicts,
    })
}

/// Document frequencies over the user side of an evaluation corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub documents: usize,
    pub df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn from_dialogues<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Self {
        let mut t = IdfTable::default();
        for d in dialogues {
            t.documents += 1;
            let vocab: HashSet<String> = words(&d.user_text()).collect();
            for w in vocab {
                *t.df.entry(w).or_default() += 1;
            }
        }
        t
    }

    /// Smoothed idf: ln((1 + N) / (1 + df)) + 1.
    pub fn idf(&self, word: &str) -> f64 {
        let df = self.df.get(word).copied().unwrap_or(0) as f64;
        ((1.0 + self.documents as f64) / (1.0 + df)).ln() + 1.0
    }
}

/// Profile keywords: content words of both narrative paragraphs.
pub fn profile_keywords(p: &UserProfile) -> BTreeSet<String> {
    content_words(&p.full_narrative()).collect()
}

/// idf-weighted fraction of profile keywords that occur in some user turn.
/// Every keyword weighs 1 when no idf table is given.
pub fn persona_coverage(p: &UserProfile, d: &Dialogue, idf: Option<&IdfTable>) -> Result<f64, ConsistencyError> {
    if !p.has_narratives() {
        return Err(ConsistencyError::EmptyInput("profile narrative"));
    }
    let keywords = profile_keywords(p);
    if keywords.is_empty() {
        return Err(ConsistencyError::EmptyKeywordSet);
    }
    let spoken: HashSet<String> = words(&d.user_text()).collect();
    let weight = |w: &str| idf.map_or(1.0, |t| t.idf(w));
    let total: f64 = keywords.iter().map(|w| weight(w)).sum();
    let hit: f64 = keywords.iter().filter(|w| spoken.contains(*w)).map(|w| weight(w)).sum();
    Ok(hit / total)
}

/// A 1..=5 judge score, or a skipped sample whose reply could not be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Scored {
        score: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    Skipped { raw: String },
}

impl JudgeOutcome {
    pub fn score(&self) -> Option<u8> {
        match self {
            JudgeOutcome::Scored { score, .. } => Some(*score),
            JudgeOutcome::Skipped { .. } => None,
        }
    }
}

/// Reads a `{"score": x}` object or a bare number; rounds half-up and clamps to 1..=5.
pub fn parse_judge_score(raw: &str) -> JudgeOutcome {
    let value = json_object(raw)
        .and_then(|o| o.get("score").and_then(as_number))
        .or_else(|| raw.trim().parse::<f64>().ok())
        .filter(|x| x.is_finite());
    let Some(x) = value else {
        warn!("unparseable judge reply skipped");
        return JudgeOutcome::Skipped { raw: raw.to_string() };
    };
    let rounded = (x + 0.5).floor();
    let clamped = rounded.clamp(1.0, 5.0);
    let warning = (clamped != rounded).then(|| {
        let w = format!("judge score {x} clamped to {clamped}");
        warn!("{w}");
        w
    });
    JudgeOutcome::Scored {
        score: clamped as u8,
        warning,
    }
}

fn judge(task: Task, source: &str, target: &str, template: &crate::prompts::Template, gateway: &Gateway) -> Result<JudgeOutcome, ConsistencyError> {
    let req = ChatRequest::prompt(task, template.render(&[("source", source), ("target", target)]))
        .with_slot("source", source)
        .with_slot("target", target);
    Ok(parse_judge_score(&gateway.complete(&req)?))
}

/// Subjective-characteristics paragraph as source, user turns as target.
pub fn sc_score(p: &UserProfile, d: &Dialogue, gateway: &Gateway, prompts: &JudgePrompts) -> Result<JudgeOutcome, ConsistencyError> {
    if d.user_turn_count() == 0 {
        return Err(ConsistencyError::NoUserTurns(d.id.clone()));
    }
    if p.narrative_sc.trim().is_empty() {
        return Err(ConsistencyError::EmptyInput("subjective narrative"));
    }
    judge(Task::JudgeSubjective, &p.narrative_sc, &d.user_transcript(), &prompts.sc_score, gateway)
}

/// User turns as source, subjective-characteristics paragraph as target.
pub fn val_score(d: &Dialogue, p: &UserProfile, gateway: &Gateway, prompts: &JudgePrompts) -> Result<JudgeOutcome, ConsistencyError> {
    if d.user_turn_count() == 0 {
        return Err(ConsistencyError::NoUserTurns(d.id.clone()));
    }
    if p.narrative_sc.trim().is_empty() {
        return Err(ConsistencyError::EmptyInput("subjective narrative"));
    }
    judge(Task::JudgeValidation, &d.user_transcript(), &p.narrative_sc, &prompts.val_score, gateway)
}

/// Mean over scored samples; skipped samples are left out.
pub fn mean_judge_score(outcomes: &[JudgeOutcome]) -> Option<f64> {
    let scores: Vec<f64> = outcomes.iter().filter_map(|o| o.score()).map(f64::from).collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}
