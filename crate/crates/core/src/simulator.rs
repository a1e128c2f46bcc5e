//! User/assistant turn loop.
//!
//! Each step asks the user backend for the next user utterance (with roles
//! flipped so the backend speaks as "assistant"), then asks the assistant
//! backend to answer it. The loop stops at the first condition that holds,
//! checked in the order early stop, token budget, turn limit. A turn that
//! would overrun the token budget is never emitted.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authenticity::{EarlyStopDetector, DEFAULT_REPETITION_THRESHOLD};
use crate::corpus::{Dialogue, Role, TokenCounter, Turn, WordProxyCounter, DEFAULT_TOKEN_BUDGET};
use crate::extractor::UserProfile;
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, Gateway, GatewayError, Task};
use crate::prompts::{roleplay_system_template, OPENING_QUESTION};
use crate::text::seeded_hash;

pub const DEFAULT_TURN_LIMIT: usize = 10;
/// System prompt for continuing a golden dialogue from its first user turn.
pub const CONTEXT_SYSTEM_PROMPT: &str =
    "You are the user in a conversation with an AI assistant. Reply with the user's next message only.";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no profiles to simulate")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SeedMode {
    /// Role-play from a profile, opening with the fixed bootstrap question.
    ProfileSeeded { profile: UserProfile },
    /// Continue from a golden dialogue's first user turn.
    ContextSeeded { dialogue_id: String, first_turn: String },
}

impl SeedMode {
    fn source_id(&self) -> &str {
        match self {
            SeedMode::ProfileSeeded { profile } => &profile.id,
            SeedMode::ContextSeeded { dialogue_id, .. } => dialogue_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub turn_limit: usize,
    pub token_budget: usize,
    pub seed_mode: SeedMode,
    pub early_stop_enabled: bool,
    pub repetition_threshold: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(seed_mode: SeedMode) -> Self {
        SimulationConfig {
            turn_limit: DEFAULT_TURN_LIMIT,
            token_budget: DEFAULT_TOKEN_BUDGET,
            seed_mode,
            early_stop_enabled: true,
            repetition_threshold: DEFAULT_REPETITION_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.turn_limit == 0 {
            return bad("turn_limit must be at least 1");
        }
        if self.token_budget == 0 {
            return bad("token_budget must be at least 1");
        }
        match &self.seed_mode {
            SeedMode::ProfileSeeded { profile } if !profile.has_narratives() => {
                bad(&format!("profile {} has an empty narrative", profile.id))
            }
            SeedMode::ContextSeeded { first_turn, .. } if first_turn.trim().is_empty() => {
                bad("first user turn is empty")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TurnLimit,
    TokenBudget,
    EarlyStop,
    BackendError,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::TurnLimit => "turn_limit",
            StopReason::TokenBudget => "token_budget",
            StopReason::EarlyStop => "early_stop",
            StopReason::BackendError => "backend_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDialogue {
    /// Carries `stop_reason` and the profile/target id in its meta.
    pub dialogue: Dialogue,
    pub stop_reason: StopReason,
    pub error: Option<GatewayError>,
    /// Wall-clock time of each emitted turn.
    pub latencies: Vec<Duration>,
}

/// The two sides of a simulation and how turns are counted.
#[derive(Clone)]
pub struct SimBackends {
    pub user: Arc<dyn ChatBackend>,
    pub assistant: Arc<dyn ChatBackend>,
    pub counter: Arc<dyn TokenCounter>,
}

impl SimBackends {
    pub fn new(user: Arc<dyn ChatBackend>, assistant: Arc<dyn ChatBackend>) -> Self {
        SimBackends {
            user,
            assistant,
            counter: Arc::new(WordProxyCounter),
        }
    }

    /// Both sides served by the gateway's chat backend.
    pub fn from_gateway(g: &Gateway) -> Self {
        SimBackends::new(g.chat_backend().clone(), g.chat_backend().clone())
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }
}

fn user_request(cfg: &SimulationConfig, turns: &[Turn], user_index: usize) -> ChatRequest {
    let (system, profile_text, opening) = match &cfg.seed_mode {
        SeedMode::ProfileSeeded { profile } => {
            let narrative = profile.full_narrative();
            let system = roleplay_system_template().render(&[("profile", &narrative)]);
            (system, narrative, Some(ChatMessage::user(OPENING_QUESTION)))
        }
        SeedMode::ContextSeeded { .. } => (CONTEXT_SYSTEM_PROMPT.to_string(), String::new(), None),
    };
    let mut messages: Vec<ChatMessage> = opening.into_iter().collect();
    messages.extend(turns.iter().map(|t| ChatMessage {
        role: t.role.flipped(),
        text: t.text.clone(),
    }));
    let last_assistant = turns
        .iter()
        .rev()
        .find(|t| t.role == Role::Assistant)
        .map(|t| t.text.clone())
        .unwrap_or_default();
    ChatRequest::new(Task::UserTurn, messages)
        .with_system(system)
        .with_seed(Some(cfg.seed))
        .with_slot("turn", user_index.to_string())
        .with_slot("profile", profile_text)
        .with_slot("last_assistant", last_assistant)
}

fn assistant_request(cfg: &SimulationConfig, turns: &[Turn]) -> ChatRequest {
    let messages = turns
        .iter()
        .map(|t| ChatMessage {
            role: t.role,
            text: t.text.clone(),
        })
        .collect();
    ChatRequest::new(Task::AssistantTurn, messages).with_seed(Some(cfg.seed))
}

/// Runs one simulation. Backend failures end the dialogue early with
/// `StopReason::BackendError` rather than discarding it.
pub fn simulate(cfg: &SimulationConfig, backends: &SimBackends) -> Result<SimulatedDialogue, SimError> {
    cfg.validate()?;
    let mut turns: Vec<Turn> = Vec::new();
    let mut latencies = Vec::new();
    let mut tokens = 0usize;
    let mut user_count = 0usize;
    let mut detector = EarlyStopDetector::new(cfg.repetition_threshold);
    let mut error = None;

    let push = |turns: &mut Vec<Turn>, role: Role, text: String| {
        let index = turns.len();
        turns.push(Turn { role, text, index });
    };

    let stop_reason = loop {
        if tokens >= cfg.token_budget {
            break StopReason::TokenBudget;
        }
        if user_count >= cfg.turn_limit {
            break StopReason::TurnLimit;
        }

        let started = Instant::now();
        let utterance = match (&cfg.seed_mode, user_count) {
            (SeedMode::ContextSeeded { first_turn, .. }, 0) => Ok(first_turn.clone()),
            _ => backends.user.complete(&user_request(cfg, &turns, user_count)),
        };
        let utterance = match utterance.map(|u| u.trim().to_string()) {
            Ok(u) if !u.is_empty() => u,
            Ok(_) => {
                error = Some(GatewayError::Decode("user backend returned an empty turn".into()));
                break StopReason::BackendError;
            }
            Err(e) => {
                error = Some(e);
                break StopReason::BackendError;
            }
        };
        let cost = backends.counter.count(&utterance);
        if tokens + cost > cfg.token_budget {
            break StopReason::TokenBudget;
        }
        tokens += cost;
        user_count += 1;
        let triggered = cfg.early_stop_enabled && detector.push(&utterance).is_some();
        push(&mut turns, Role::User, utterance);
        latencies.push(started.elapsed());
        if triggered {
            break StopReason::EarlyStop;
        }

        let started = Instant::now();
        let reply = match backends.assistant.complete(&assistant_request(cfg, &turns)) {
            Ok(r) if !r.trim().is_empty() => r.trim().to_string(),
            Ok(_) => {
                error = Some(GatewayError::Decode("assistant backend returned an empty turn".into()));
                break StopReason::BackendError;
            }
            Err(e) => {
                error = Some(e);
                break StopReason::BackendError;
            }
        };
        let cost = backends.counter.count(&reply);
        if tokens + cost > cfg.token_budget {
            break StopReason::TokenBudget;
        }
        tokens += cost;
        push(&mut turns, Role::Assistant, reply);
        latencies.push(started.elapsed());
    };

    let source = cfg.seed_mode.source_id().to_string();
    let mut meta = BTreeMap::from([("stop_reason".to_string(), stop_reason.as_str().to_string())]);
    match &cfg.seed_mode {
        SeedMode::ProfileSeeded { .. } => meta.insert("profile_id".into(), source.clone()),
        SeedMode::ContextSeeded { .. } => meta.insert("target_id".into(), source.clone()),
    };
    Ok(SimulatedDialogue {
        dialogue: Dialogue {
            id: format!("sim-{source}"),
            turns,
            meta,
        },
        stop_reason,
        error,
        latencies,
    })
}

/// Per-item seed derived from the batch seed and the source id.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    seeded_hash(seed, id.as_bytes())
}

fn run_all(modes: Vec<SeedMode>, base: &SimulationConfig, backends: &SimBackends) -> Vec<Result<SimulatedDialogue, SimError>> {
    let cfgs: Vec<SimulationConfig> = modes
        .into_iter()
        .map(|seed_mode| SimulationConfig {
            seed: item_seed(base.seed, seed_mode.source_id()),
            seed_mode,
            ..base.clone()
        })
        .collect();
    crate::par_map(&cfgs, |c| simulate(c, backends))
}

/// One profile-seeded simulation per profile, order-aligned with the input.
/// Per-item failures are returned in place; `base.seed_mode` is ignored.
pub fn run_batch(
    profiles: &[UserProfile],
    base: &SimulationConfig,
    backends: &SimBackends,
) -> Result<Vec<Result<SimulatedDialogue, SimError>>, SimError> {
    if profiles.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let modes = profiles
        .iter()
        .map(|p| SeedMode::ProfileSeeded { profile: p.clone() })
        .collect();
    Ok(run_all(modes, base, backends))
}

/// Context-seeded counterpart of [`run_batch`], continuing golden dialogues.
pub fn run_context_batch(
    dialogues: &[Dialogue],
    base: &SimulationConfig,
    backends: &SimBackends,
) -> Result<Vec<Result<SimulatedDialogue, SimError>>, SimError> {
    if dialogues.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let modes = dialogues
        .iter()
        .map(|d| SeedMode::ContextSeeded {
            dialogue_id: d.id.clone(),
            first_turn: d.user_turns().next().map(|t| t.text.clone()).unwrap_or_default(),
        })
        .collect();
    Ok(run_all(modes, base, backends))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FnChat;
    use crate::gateway::MockBackend;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn profile() -> UserProfile {
        UserProfile::from_narratives("p1", "You study chemistry in Lyon.", "You are curious and polite.")
    }

    fn mock() -> SimBackends {
        let m = Arc::new(MockBackend::new(1));
        SimBackends::new(m.clone(), m)
    }

    fn cfg() -> SimulationConfig {
        SimulationConfig::new(SeedMode::ProfileSeeded { profile: profile() })
    }

    #[test]
    fn default_turn_limit() {
        let s = simulate(&cfg(), &mock()).unwrap();
        assert_eq!(s.stop_reason, StopReason::TurnLimit);
        assert_eq!(s.dialogue.user_turn_count(), 10);
        assert_eq!(s.dialogue.turns[0].role, Role::User);
        s.dialogue.validate().unwrap();
        assert_eq!(s.dialogue.meta["stop_reason"], "turn_limit");
        assert_eq!(s.dialogue.meta["profile_id"], "p1");
    }

    #[test]
    fn single_exchange() {
        let c = SimulationConfig { turn_limit: 1, ..cfg() };
        let s = simulate(&c, &mock()).unwrap();
        assert_eq!(s.dialogue.turns.len(), 2);
    }

    #[test]
    fn gratitude_early_stop() {
        let thanks = Arc::new(FnChat(|_: &ChatRequest| Ok("thank you".to_string())));
        let b = SimBackends::new(thanks, Arc::new(MockBackend::new(0)));
        let s = simulate(&cfg(), &b).unwrap();
        assert_eq!(s.stop_reason, StopReason::EarlyStop);
        assert_eq!(s.dialogue.user_turn_count(), 3);
        assert_eq!(s.dialogue.turns.last().unwrap().role, Role::User);
    }

    #[test]
    fn token_budget_binds() {
        let c = SimulationConfig { token_budget: 40, ..cfg() };
        let b = mock();
        let s = simulate(&c, &b).unwrap();
        assert_eq!(s.stop_reason, StopReason::TokenBudget);
        let total: usize = s.dialogue.turns.iter().map(|t| b.counter.count(&t.text)).sum();
        assert!(total <= 40);
    }

    #[test]
    fn opening_question_and_system_prompt() {
        let seen = Arc::new(std::sync::Mutex::new(None));
        let seen2 = seen.clone();
        let user = Arc::new(FnChat(move |r: &ChatRequest| {
            seen2.lock().unwrap().get_or_insert_with(|| r.clone());
            Ok("hello".to_string())
        }));
        let b = SimBackends::new(user, Arc::new(MockBackend::new(0)));
        simulate(&SimulationConfig { turn_limit: 1, ..cfg() }, &b).unwrap();
        let first = seen.lock().unwrap().clone().unwrap();
        assert_eq!(first.messages[0].text, OPENING_QUESTION);
        assert!(first.system.unwrap().contains("You study chemistry in Lyon."));
    }

    #[test]
    fn context_seeded_starts_with_golden_turn() {
        let c = SimulationConfig {
            turn_limit: 2,
            ..SimulationConfig::new(SeedMode::ContextSeeded {
                dialogue_id: "g1".into(),
                first_turn: "How do I bake bread?".into(),
            })
        };
        let s = simulate(&c, &mock()).unwrap();
        assert_eq!(s.dialogue.turns[0].text, "How do I bake bread?");
        assert_eq!(s.dialogue.meta["target_id"], "g1");
    }

    #[test]
    fn backend_error_keeps_partial_dialogue() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c2 = calls.clone();
        let flaky = Arc::new(FnChat(move |_: &ChatRequest| {
            if c2.fetch_add(1, Ordering::SeqCst) >= 1 {
                Err(GatewayError::Timeout)
            } else {
                Ok("sure, here you go".to_string())
            }
        }));
        let b = SimBackends::new(Arc::new(MockBackend::new(0)), flaky);
        let s = simulate(&cfg(), &b).unwrap();
        assert_eq!(s.stop_reason, StopReason::BackendError);
        assert_eq!(s.dialogue.turns.len(), 3);
        assert_eq!(s.error, Some(GatewayError::Timeout));
    }

    #[test]
    fn invalid_configs() {
        assert!(simulate(&SimulationConfig { turn_limit: 0, ..cfg() }, &mock()).is_err());
        let empty = SimulationConfig::new(SeedMode::ProfileSeeded {
            profile: UserProfile::from_narratives("e", "", ""),
        });
        assert!(matches!(simulate(&empty, &mock()), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn batch_isolation_and_determinism() {
        let mut ps = vec![profile(), profile(), profile()];
        ps[1].id = "p2".into();
        ps[2].id = "bad".into();
        ps[2].narrative_sc.clear();
        let out = run_batch(&ps, &cfg(), &mock()).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out[0].is_ok() && out[1].is_ok() && out[2].is_err());
        let again = run_batch(&ps, &cfg(), &mock()).unwrap();
        assert_eq!(out[0].as_ref().unwrap().dialogue, again[0].as_ref().unwrap().dialogue);
        assert!(matches!(run_batch(&[], &cfg(), &mock()), Err(SimError::EmptyBatch)));
    }
}
