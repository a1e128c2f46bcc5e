//! Deterministic offline backends.
//!
//! `MockBackend` answers every [`Task`] with output derived only from the
//! request and its seed, so whole pipeline runs are byte-reproducible:
//!
//! - extraction tasks return keyword-heuristic attribute JSON,
//! - polishing renders the attributes into two second-person paragraphs,
//! - decomposition splits on sentence boundaries,
//! - NLI answers Consistent iff the target occurs verbatim (case- and
//!   whitespace-insensitive) in the source, otherwise Ambiguous,
//! - judges score 1..=5 from content-word overlap,
//! - embeddings are a seeded random projection of character trigram counts,
//! - the detector returns 0.9 for text containing `AI_STYLE`, else 0.1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, Channel, Detector, EmbedBackend, EmbeddingVector, GatewayError, Task};
use crate::text::{content_words, seeded_hash, sentences, words};

pub const DEFAULT_DIMENSION: usize = 64;
pub const AI_MARKER: &str = "AI_STYLE";
const STYLE_SALT: u64 = 0x0053_5459_4c45;

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dimension: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            dimension: DEFAULT_DIMENSION,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    fn vector(&self, text: &str, channel: Channel) -> Vec<f64> {
        let seed = match channel {
            Channel::Semantic => self.seed,
            Channel::Style => self.seed ^ STYLE_SALT,
        };
        let padded: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for w in padded.windows(3) {
            *counts.entry(w.iter().collect()).or_default() += 1;
        }
        let mut v = vec![0.0; self.dimension];
        for (gram, count) in counts {
            let base = seeded_hash(seed, gram.as_bytes());
            for (i, slot) in v.iter_mut().enumerate() {
                let h = seeded_hash(base, &(i as u64).to_le_bytes());
                // uniform in [-1, 1)
                let r = (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
                *slot += f64::from(count) * r;
            }
        }
        crate::linalg::normalize(&mut v);
        v
    }

    fn reply(&self, req: &ChatRequest) -> String {
        match req.task {
            Task::ExtractSceneConsistent => scene_consistent(&user_lines(req)).to_string(),
            Task::ExtractSceneRelated => scene_related(&user_lines(req)).to_string(),
            Task::ExtractPersonality => personality(&user_lines(req)).to_string(),
            Task::Polish => polish(req.slot("attributes")),
            Task::Decompose => Value::from(sentences(req.slot("text"))).to_string(),
            Task::Nli => nli(req.slot("source"), req.slot("target")).to_string(),
            Task::JudgeSubjective | Task::JudgeValidation => {
                judge(req.slot("source"), req.slot("target")).to_string()
            }
            Task::UserTurn => self.user_turn(req),
            Task::AssistantTurn | Task::Generic => assistant_turn(req),
        }
    }

    fn user_turn(&self, req: &ChatRequest) -> String {
        const TEMPLATES: [&str; 10] = [
            "hi! can you help me with {}?",
            "ok, next thing: {}",
            "what about {} then",
            "could you explain {} in more detail",
            "i'm also curious about {}.",
            "quick question on {}",
            "how would you approach {}?",
            "makes sense. and {}?",
            "give me an example involving {}",
            "last one, tell me about {}",
        ];
        let turn: usize = req.slot("turn").parse().unwrap_or(0);
        let material = if req.slot("profile").is_empty() {
            req.slot("last_assistant")
        } else {
            req.slot("profile")
        };
        let pool: Vec<String> = content_words(material).collect();
        let topic = if pool.is_empty() {
            "this".to_string()
        } else {
            let start = (turn * 5) % pool.len();
            pool.iter().cycle().skip(start).take(5.min(pool.len())).cloned().collect::<Vec<_>>().join(" ")
        };
        let offset = (seeded_hash(req.seed.unwrap_or(self.seed), b"user-template") % 10) as usize;
        TEMPLATES[(turn + offset) % TEMPLATES.len()].replace("{}", &topic)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        Ok(self.reply(req))
    }
}

impl EmbedBackend for MockBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str], channel: Channel) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector {
                values: self.vector(t, channel),
                channel,
                normalized: true,
            })
            .collect())
    }
}

impl Detector for MockBackend {
    fn ai_probability(&self, text: &str) -> Result<f64, GatewayError> {
        Ok(if text.contains(AI_MARKER) { 0.9 } else { 0.1 })
    }
}

/// Chat backend driven by a closure; handy for scripted tests.
pub struct FnChat<F>(pub F);

impl<F> ChatBackend for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (self.0)(req)
    }
}

pub struct FnDetector<F>(pub F);

impl<F> Detector for FnDetector<F>
where
    F: Fn(&str) -> Result<f64, GatewayError> + Send + Sync,
{
    fn ai_probability(&self, text: &str) -> Result<f64, GatewayError> {
        (self.0)(text)
    }
}

/// Fixed text-to-vector lookup with a hashed fallback for unknown texts.
/// Vectors are returned as given, without normalization.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
    fallback: MockBackend,
}

impl TableEmbedder {
    pub fn new(dimension: usize) -> Self {
        TableEmbedder {
            dimension,
            table: HashMap::new(),
            fallback: MockBackend::new(0).with_dimension(dimension),
        }
    }

    pub fn with(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        self.table.insert(text.into(), values);
        self
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) {
        self.table.insert(text.into(), values);
    }
}

impl EmbedBackend for TableEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str], channel: Channel) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| match self.table.get(*t) {
                Some(v) => EmbeddingVector {
                    values: v.clone(),
                    channel,
                    normalized: false,
                },
                None => EmbeddingVector {
                    values: self.fallback.vector(t, channel),
                    channel,
                    normalized: true,
                },
            })
            .collect())
    }
}

// ---- canned task behaviour ----

fn user_lines(req: &ChatRequest) -> Vec<String> {
    serde_json::from_str(req.slot("user_turns")).unwrap_or_default()
}

fn avg_words(lines: &[String]) -> f64 {
    if lines.is_empty() {
        return 0.0;
    }
    lines.iter().map(|l| crate::text::word_count(l)).sum::<usize>() as f64 / lines.len() as f64
}

const KEYWORD_FACTS: &[(&str, &[&str], &str)] = &[
    ("occupation", &["code", "python", "rust", "function", "program", "bug", "compile", "sql", "database"],
        "Likely works with software or studies programming"),
    ("education", &["homework", "exam", "course", "class", "thesis", "university", "assignment"],
        "Currently enrolled in some form of study"),
    ("routines_or_habits", &["cook", "recipe", "bake", "vegan", "meal", "dinner"],
        "Cooks regularly and cares about food"),
    ("family_relationships", &["mom", "dad", "sister", "brother", "wife", "husband", "son", "daughter", "kids"],
        "Mentions close family members"),
    ("social_relationships", &["friend", "friends", "colleague", "boss", "team", "coworker"],
        "Talks about friends or colleagues"),
    ("other_experiences", &["travel", "trip", "visited", "flight", "hotel"],
        "Has travel experience or plans"),
];

fn scene_consistent(lines: &[String]) -> Value {
    let vocab: BTreeSet<String> = lines.iter().flat_map(|l| words(l).collect::<Vec<_>>()).collect();
    let mut fields: BTreeMap<&str, Vec<String>> = [
        "age", "gender", "location", "occupation", "education", "family_relationships",
        "routines_or_habits", "social_relationships", "other_experiences", "language_style",
    ]
    .into_iter()
    .map(|k| (k, Vec::new()))
    .collect();
    for (field, keys, fact) in KEYWORD_FACTS {
        if keys.iter().any(|k| vocab.contains(*k)) {
            fields.get_mut(field).unwrap().push((*fact).to_string());
        }
    }
    let style = fields.get_mut("language_style").unwrap();
    if !lines.is_empty() {
        style.push(if avg_words(lines) < 12.0 {
            "Concise and task-oriented".into()
        } else {
            "Detailed and elaborate".into()
        });
    }
    if lines.iter().any(|l| crate::authenticity::is_gratitude(l)) {
        style.push("Polite, says thanks after getting an answer".into());
    }
    if lines.iter().any(|l| l.contains('?')) {
        style.push("Asks direct questions".into());
    }
    json!(fields)
}

fn scene_related(lines: &[String]) -> Value {
    let scenarios: Vec<Value> = lines
        .iter()
        .take(3)
        .map(|l| {
            let head: Vec<&str> = l.split_whitespace().take(8).collect();
            let first = sentences(l).into_iter().next().unwrap_or_else(|| l.clone());
            json!({
                "goals_or_plans": format!("Wants help with {}", head.join(" ")),
                "task_details": [first],
            })
        })
        .collect();
    json!({ "scenarios": scenarios })
}

fn personality(lines: &[String]) -> Value {
    let text = lines.join(" ");
    let vocab: BTreeSet<String> = content_words(&text).collect();
    let mut out = serde_json::Map::new();
    let mut put = |trait_name: &str, score: &str, conclusion: &str, reason: &str| {
        out.insert(
            trait_name.into(),
            json!({ "score": score, "conclusion": conclusion, "reason": reason }),
        );
    };
    if vocab.len() > 20 {
        put("Openness", "High", "The user is a curious person with wide interests.",
            "Covers many distinct topics.");
    } else {
        put("Openness", "Inconclusive", "", "");
    }
    if avg_words(lines) >= 12.0 || vocab.contains("step") || vocab.contains("please") {
        put("Conscientiousness", "High", "The user is a careful and organized person.",
            "Gives detailed, structured requests.");
    } else {
        put("Conscientiousness", "Inconclusive", "", "");
    }
    put("Extraversion", "Inconclusive", "", "");
    if lines.iter().any(|l| crate::authenticity::is_gratitude(l)) {
        put("Agreeableness", "High", "The user is a friendly and appreciative person.",
            "Thanks the assistant.");
    } else {
        put("Agreeableness", "Inconclusive", "", "");
    }
    if text.contains('!') {
        put("Neuroticism", "High", "The user is an emotionally expressive person.",
            "Uses exclamations.");
    } else {
        put("Neuroticism", "Low", "The user is a calm and even-tempered person.",
            "Keeps a steady tone.");
    }
    Value::Object(out)
}

fn lowercase_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn trim_period(s: &str) -> &str {
    s.trim().trim_end_matches('.')
}

fn polish(attributes: &str) -> String {
    let attrs: Value = serde_json::from_str(attributes).unwrap_or(Value::Null);
    let mut of = Vec::new();
    if let Some(sc) = attrs.get("scene_consistent").and_then(Value::as_object) {
        for (field, values) in sc {
            if field == "language_style" {
                continue;
            }
            for v in values.as_array().into_iter().flatten().filter_map(Value::as_str) {
                of.push(format!("Your {}: {}.", field.replace('_', " "), trim_period(v)));
            }
        }
    }
    for s in attrs.get("scene_related").and_then(Value::as_array).into_iter().flatten() {
        if let Some(g) = s.get("goals_or_plans").and_then(Value::as_str) {
            of.push(format!("You {}.", lowercase_first(trim_period(g))));
        }
        for t in s.get("task_details").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str) {
            of.push(format!("You asked: {}", t.trim()));
        }
    }
    if of.is_empty() {
        of.push("You are a user chatting with an AI assistant.".into());
    }
    let mut sc = Vec::new();
    if let Some(traits) = attrs.get("big_five").and_then(Value::as_object) {
        for (name, t) in traits {
            let score = t.get("score").and_then(Value::as_str).unwrap_or("");
            let conclusion = t.get("conclusion").and_then(Value::as_str).unwrap_or("");
            sc.push(format!(
                "You rank {} on {name}: {}.",
                score.to_lowercase(),
                trim_period(&conclusion.replace("The user is", "you are"))
            ));
        }
    }
    for v in attrs
        .pointer("/scene_consistent/language_style")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
    {
        sc.push(format!("Your language style: {}.", trim_period(v)));
    }
    if sc.is_empty() {
        sc.push("You communicate in a plain, straightforward way.".into());
    }
    format!("{}\n\n{}", of.join(" "), sc.join(" "))
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Substring oracle: Consistent iff the target occurs in the source.
pub fn substring_verdict(source: &str, target: &str) -> i64 {
    let t = squash(target);
    i64::from(!t.is_empty() && squash(source).contains(&t))
}

fn nli(source: &str, target: &str) -> Value {
    let score = substring_verdict(source, target);
    let reason = if score == 1 {
        "The Target appears in the Source."
    } else {
        "The Source gives no direct evidence for the Target."
    };
    json!({ "score": score, "reason": reason })
}

fn judge(source: &str, target: &str) -> Value {
    let src: BTreeSet<String> = content_words(source).collect();
    let tgt: BTreeSet<String> = content_words(target).collect();
    let overlap = if tgt.is_empty() {
        0.0
    } else {
        tgt.intersection(&src).count() as f64 / tgt.len() as f64
    };
    let score = 1 + (4.0 * overlap).round() as i64;
    json!({ "score": score, "reason": format!("{:.0}% of target content words appear in the source.", overlap * 100.0) })
}

fn assistant_turn(req: &ChatRequest) -> String {
    let last = req.messages.last().map(|m| m.text.as_str()).unwrap_or("");
    let topic: Vec<String> = content_words(last).take(6).collect();
    let topic = if topic.is_empty() { "that".to_string() } else { topic.join(" ") };
    let h = seeded_hash(req.seed.unwrap_or(0), last.as_bytes());
    let opener = ["Sure.", "Of course.", "Good question.", "Happy to help."][(h % 4) as usize];
    format!("{opener} Here is a short answer about {topic}. Let me know if you want more detail.")
}
