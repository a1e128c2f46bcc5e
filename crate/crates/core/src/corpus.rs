//! Dialogue corpora: JSONL ingestion, exact dedup, budgeted segmentation and
//! keep/drop filter hooks.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOKEN_BUDGET: usize = 4096;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid dialogue: {0}")]
    InvalidDialogue(String),
    #[error("duplicate dialogue id {0:?}")]
    DuplicateId(String),
    #[error("turn {0} exceeds the token budget on its own")]
    TurnTooLong(usize),
    #[error("user turn {0} cannot share a segment with the assistant turn before it")]
    PairTooLong(usize),
    #[error("filter hook {hook:?} failed on dialogue {dialogue:?}: {message}")]
    HookFailure {
        hook: String,
        dialogue: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub fn flipped(self) -> Role {
        match self {
            Role::User => Role::Assistant,
            Role::Assistant => Role::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub index: usize,
}

/// An ordered, strictly alternating exchange of user and assistant turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub meta: BTreeMap<String, String>,
}

impl Dialogue {
    /// Builds a dialogue from `(role, text)` pairs, indexing turns from zero.
    pub fn new<I, S>(id: impl Into<String>, turns: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (Role, S)>,
        S: Into<String>,
    {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(index, (role, text))| Turn {
                role,
                text: text.into(),
                index,
            })
            .collect();
        let d = Dialogue {
            id: id.into(),
            turns,
            meta: BTreeMap::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidDialogue(format!("{}: {m}", self.id)));
        if self.turns.is_empty() {
            return bad("no turns".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return bad(format!("turn {i} is blank"));
            }
            if i > 0 {
                let prev = &self.turns[i - 1];
                if prev.role == t.role {
                    return bad(format!("turn {i} repeats role {}", t.role.as_str()));
                }
                if prev.index >= t.index {
                    return bad(format!("turn {i} index not increasing"));
                }
            }
        }
        if !self.turns.iter().any(|t| t.role == Role::User) {
            return bad("no user turn".into());
        }
        Ok(())
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::User)
    }

    pub fn user_turn_count(&self) -> usize {
        self.user_turns().count()
    }

    /// All user utterances joined by newlines; the dialogue-level text used by
    /// the similarity metrics.
    pub fn user_text(&self) -> String {
        self.user_turns()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Turns preceding the `j`-th user turn (0-based).
    pub fn context_before_user_turn(&self, j: usize) -> &[Turn] {
        let pos = self
            .turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::User)
            .nth(j)
            .map(|(i, _)| i)
            .unwrap_or(self.turns.len());
        &self.turns[..pos]
    }

    /// `[User]: ...` / `[Assistant]: ...` transcript used inside prompts.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| match t.role {
                Role::User => format!("[User]: {}", t.text),
                Role::Assistant => format!("[Assistant]: {}", t.text),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// User turns only, numbered, as judged by the NLI and judge prompts.
    pub fn user_transcript(&self) -> String {
        self.user_turns()
            .enumerate()
            .map(|(j, t)| format!("[User](Turn-{}): {}", j + 1, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub token_budget: usize,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for d in &dialogues {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Corpus {
            dialogues,
            token_budget: DEFAULT_TOKEN_BUDGET,
        })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace words × 1.3, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordProxyCounter;

impl TokenCounter for WordProxyCounter {
    fn count(&self, text: &str) -> usize {
        (crate::text::word_count(text) * 13).div_ceil(10)
    }
}

// ---- wire format ----

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageRecord {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DialogueRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub messages: Vec<MessageRecord>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl From<&Dialogue> for DialogueRecord {
    fn from(d: &Dialogue) -> Self {
        DialogueRecord {
            id: Some(d.id.clone()),
            messages: d
                .turns
                .iter()
                .map(|t| MessageRecord {
                    role: t.role.as_str().to_string(),
                    content: t.text.clone(),
                })
                .collect(),
            meta: d
                .meta
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        }
    }
}

impl DialogueRecord {
    /// Normalizes a raw record: trims text, drops system and blank messages,
    /// merges consecutive messages from the same speaker.
    pub fn into_dialogue(self, fallback_id: String) -> Result<Dialogue, String> {
        let mut merged: Vec<(Role, String)> = Vec::new();
        for m in self.messages {
            let role = match m.role.to_ascii_lowercase().as_str() {
                "user" | "human" => Role::User,
                "assistant" | "gpt" => Role::Assistant,
                "system" => continue,
                other => return Err(format!("unknown role {other:?}")),
            };
            let text = m.content.trim();
            if text.is_empty() {
                continue;
            }
            match merged.last_mut() {
                Some((r, t)) if *r == role => {
                    t.push('\n');
                    t.push_str(text);
                }
                _ => merged.push((role, text.to_string())),
            }
        }
        let id = self.id.unwrap_or(fallback_id);
        let mut d = Dialogue::new(id, merged).map_err(|e| e.to_string())?;
        d.meta = self
            .meta
            .into_iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => (k, s),
                other => (k, other.to_string()),
            })
            .collect();
        Ok(d)
    }
}

pub fn to_jsonl_line(d: &Dialogue) -> String {
    serde_json::to_string(&DialogueRecord::from(d)).expect("dialogue records always serialize")
}

/// Result of reading a corpus file; malformed lines are reported, not dropped silently.
#[derive(Debug)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    pub errors: Vec<CorpusError>,
}

pub fn load_dialogues(path: impl AsRef<Path>) -> Result<LoadOutcome, CorpusError> {
    let file = File::open(path)?;
    read_dialogues(BufReader::new(file))
}

pub fn read_dialogues(reader: impl BufRead) -> Result<LoadOutcome, CorpusError> {
    let mut dialogues = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut records = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let parsed = serde_json::from_str::<DialogueRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_dialogue(format!("line-{line_no}")));
        match parsed {
            Ok(d) if !seen.insert(d.id.clone()) => errors.push(CorpusError::Parse {
                line: line_no,
                message: format!("duplicate dialogue id {:?}", d.id),
            }),
            Ok(d) => dialogues.push(d),
            Err(message) => errors.push(CorpusError::Parse {
                line: line_no,
                message,
            }),
        }
    }
    if records == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(LoadOutcome {
        corpus: Corpus::new(dialogues)?,
        errors,
    })
}

pub fn write_dialogues<'a>(
    path: impl AsRef<Path>,
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
) -> Result<usize, CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for d in dialogues {
        writeln!(w, "{}", to_jsonl_line(d))?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Keeps the first of every group of dialogues with identical role/text sequences.
pub fn dedup_exact(corpus: Corpus) -> Corpus {
    let mut seen: HashSet<Vec<(Role, String)>> = HashSet::new();
    let Corpus {
        dialogues,
        token_budget,
    } = corpus;
    let dialogues = dialogues
        .into_iter()
        .filter(|d| seen.insert(d.turns.iter().map(|t| (t.role, t.text.clone())).collect()))
        .collect();
    Corpus {
        dialogues,
        token_budget,
    }
}

/// Greedily packs whole turns into segments of at most `token_budget` tokens.
///
/// Segments partition the turn sequence. A cut is only placed in front of an
/// assistant turn, so every segment after the first opens with the answer to
/// the previous segment's last question. When a segment cannot be extended,
/// the cut backs off to the latest assistant turn inside it.
pub fn segment_dialogue(
    d: &Dialogue,
    token_budget: usize,
    tokenizer: &dyn TokenCounter,
) -> Result<Vec<Dialogue>, CorpusError> {
    let costs: Vec<usize> = d.turns.iter().map(|t| tokenizer.count(&t.text)).collect();
    if let Some(i) = costs.iter().position(|&c| c > token_budget) {
        return Err(CorpusError::TurnTooLong(i));
    }
    let n = d.turns.len();
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        let mut used = 0;
        while end < n && used + costs[end] <= token_budget {
            used += costs[end];
            end += 1;
        }
        if end == n {
            bounds.push((start, n));
            break;
        }
        let cut = (start + 1..=end)
            .rev()
            .find(|&c| d.turns[c].role == Role::Assistant)
            .ok_or(CorpusError::PairTooLong(start + 1))?;
        bounds.push((start, cut));
        start = cut;
    }
    if bounds.len() == 1 {
        return Ok(vec![d.clone()]);
    }
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(k, (s, e))| {
            let mut meta = d.meta.clone();
            meta.insert("segment".into(), k.to_string());
            meta.insert("parent_id".into(), d.id.clone());
            Dialogue {
                id: format!("{}#{k}", d.id),
                turns: d.turns[s..e].to_vec(),
                meta,
            }
        })
        .collect())
}

pub trait FilterHook: Send + Sync {
    fn name(&self) -> &str;
    fn keep(&self, d: &Dialogue) -> Result<bool, String>;
}

/// A named hook that keeps everything. Stands in for external language and
/// toxicity classifiers.
#[derive(Debug, Clone)]
pub struct NoopHook(pub String);

impl FilterHook for NoopHook {
    fn name(&self) -> &str {
        &self.0
    }
    fn keep(&self, _: &Dialogue) -> Result<bool, String> {
        Ok(true)
    }
}

pub struct FnHook<F> {
    name: String,
    f: F,
}

impl<F> FnHook<F>
where
    F: Fn(&Dialogue) -> Result<bool, String> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnHook {
            name: name.into(),
            f,
        }
    }
}

impl<F> FilterHook for FnHook<F>
where
    F: Fn(&Dialogue) -> Result<bool, String> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn keep(&self, d: &Dialogue) -> Result<bool, String> {
        (self.f)(d)
    }
}

/// Drops dialogues with fewer than `min` user turns.
pub fn min_user_turns(min: usize) -> impl FilterHook {
    FnHook::new(format!("min_user_turns_{min}"), move |d: &Dialogue| {
        Ok(d.user_turn_count() >= min)
    })
}

pub fn apply_filters(corpus: Corpus, hooks: &[Box<dyn FilterHook>]) -> Result<Corpus, CorpusError> {
    let mut kept = Vec::with_capacity(corpus.dialogues.len());
    'outer: for d in corpus.dialogues {
        for h in hooks {
            match h.keep(&d) {
                Ok(true) => {}
                Ok(false) => continue 'outer,
                Err(message) => {
                    return Err(CorpusError::HookFailure {
                        hook: h.name().to_string(),
                        dialogue: d.id.clone(),
                        message,
                    })
                }
            }
        }
        kept.push(d);
    }
    Ok(Corpus {
        dialogues: kept,
        token_budget: corpus.token_budget,
    })
}
