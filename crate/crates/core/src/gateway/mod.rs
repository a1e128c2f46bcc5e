//! One front door for every model call: chat completion, text embedding on
//! two channels, and AI-utterance detection.
//!
//! Backends are trait objects so the pipeline runs unchanged against a hosted
//! chat-completions server ([`http::HttpBackend`]) or the deterministic
//! [`mock::MockBackend`]. A [`BackendConfig`] whose endpoint starts with
//! `mock:` selects the mock.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Role;

#[cfg(feature = "http")]
pub mod http;
pub mod mock;

pub use mock::{FnChat, FnDetector, MockBackend, TableEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("backend returned {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode backend response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Semantic,
    Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub channel: Channel,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        crate::linalg::cosine(&self.values, &other.values)
    }
}

/// What a chat request is for. Never sent over the wire; the mock backend
/// dispatches on it and logs use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Generic,
    ExtractSceneConsistent,
    ExtractSceneRelated,
    ExtractPersonality,
    Polish,
    Decompose,
    Nli,
    JudgeSubjective,
    JudgeValidation,
    UserTurn,
    AssistantTurn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub task: Task,
    /// Unrendered template inputs, kept for audit and for the mock backend.
    pub slots: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(task: Task, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            system: None,
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
            task,
            slots: BTreeMap::new(),
        }
    }

    /// Single user message built from a rendered prompt.
    pub fn prompt(task: Task, text: impl Into<String>) -> Self {
        Self::new(task, vec![ChatMessage::user(text)])
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_slot(mut self, key: &str, value: impl Into<String>) -> Self {
        self.slots.insert(key.to_string(), value.into());
        self
    }

    pub fn slot(&self, key: &str) -> &str {
        self.slots.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub rate_limit: f64,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    /// Declared embedding dimension; checked against every embedding response.
    pub dimension: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "mock:".into(),
            model: "mock".into(),
            auth_env: None,
            rate_limit: 5.0,
            retry: RetryPolicy::default(),
            timeout_ms: 60_000,
            dimension: mock::DEFAULT_DIMENSION,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock:")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.rate_limit.is_nan() || self.rate_limit <= 0.0 {
            return Err(GatewayError::InvalidRequest("rate limit must be > 0".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::InvalidRequest("max attempts must be >= 1".into()));
        }
        if self.dimension == 0 {
            return Err(GatewayError::InvalidRequest("dimension must be positive".into()));
        }
        Ok(())
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

pub trait EmbedBackend: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str], channel: Channel) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

pub trait Detector: Send + Sync {
    /// Probability in [0, 1] that `text` was written by a model.
    fn ai_probability(&self, text: &str) -> Result<f64, GatewayError>;
}

/// Bundle of backends shared by every pipeline stage. Cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    semantic: Arc<dyn EmbedBackend>,
    style: Arc<dyn EmbedBackend>,
    detector: Arc<dyn Detector>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("semantic_dim", &self.semantic.dimension())
            .field("style_dim", &self.style.dimension())
            .finish_non_exhaustive()
    }
}

/// Configs for each backend role.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub chat: BackendConfig,
    pub semantic: BackendConfig,
    pub style: BackendConfig,
    pub detector: BackendConfig,
}

impl Gateway {
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        semantic: Arc<dyn EmbedBackend>,
        style: Arc<dyn EmbedBackend>,
        detector: Arc<dyn Detector>,
    ) -> Self {
        Gateway {
            chat,
            semantic,
            style,
            detector,
        }
    }

    /// Every role served by one seeded mock.
    pub fn mock(seed: u64) -> Self {
        let m = Arc::new(MockBackend::new(seed));
        Gateway::new(m.clone(), m.clone(), m.clone(), m)
    }

    /// Builds each role from its config; `mock:` endpoints share one mock seeded with `seed`.
    pub fn from_config(cfg: &GatewayConfig, seed: u64) -> Result<Self, GatewayError> {
        for c in [&cfg.chat, &cfg.semantic, &cfg.style, &cfg.detector] {
            c.validate()?;
        }
        let chat: Arc<dyn ChatBackend> = if cfg.chat.is_mock() {
            Arc::new(MockBackend::new(seed))
        } else {
            remote(&cfg.chat)?
        };
        let semantic: Arc<dyn EmbedBackend> = if cfg.semantic.is_mock() {
            Arc::new(MockBackend::new(seed).with_dimension(cfg.semantic.dimension))
        } else {
            remote(&cfg.semantic)?
        };
        let style: Arc<dyn EmbedBackend> = if cfg.style.is_mock() {
            Arc::new(MockBackend::new(seed).with_dimension(cfg.style.dimension))
        } else {
            remote(&cfg.style)?
        };
        let detector: Arc<dyn Detector> = if cfg.detector.is_mock() {
            Arc::new(MockBackend::new(seed))
        } else {
            remote(&cfg.detector)?
        };
        Ok(Gateway::new(chat, semantic, style, detector))
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatBackend>) -> Self {
        self.chat = chat;
        self
    }

    pub fn with_embedder(mut self, channel: Channel, e: Arc<dyn EmbedBackend>) -> Self {
        match channel {
            Channel::Semantic => self.semantic = e,
            Channel::Style => self.style = e,
        }
        self
    }

    pub fn with_detector(mut self, d: Arc<dyn Detector>) -> Self {
        self.detector = d;
        self
    }

    pub fn chat_backend(&self) -> &Arc<dyn ChatBackend> {
        &self.chat
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        self.chat.complete(req)
    }

    pub fn dimension(&self, channel: Channel) -> usize {
        self.embedder(channel).dimension()
    }

    fn embedder(&self, channel: Channel) -> &dyn EmbedBackend {
        match channel {
            Channel::Semantic => self.semantic.as_ref(),
            Channel::Style => self.style.as_ref(),
        }
    }

    /// One vector per input, in input order.
    pub fn embed<T: AsRef<str>>(
        &self,
        texts: &[T],
        channel: Channel,
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let refs: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
        let backend = self.embedder(channel);
        let out = backend.embed(&refs, channel)?;
        if out.len() != refs.len() {
            return Err(GatewayError::Decode(format!(
                "expected {} embeddings, got {}",
                refs.len(),
                out.len()
            )));
        }
        let dim = backend.dimension();
        for v in &out {
            if v.dim() != dim {
                return Err(GatewayError::Decode(format!(
                    "embedding has dimension {}, backend declares {dim}",
                    v.dim()
                )));
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::Decode("non-finite embedding entry".into()));
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str, channel: Channel) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text], channel)?.remove(0))
    }

    pub fn ai_detect(&self, text: &str) -> Result<f64, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty text".into()));
        }
        let p = self.detector.ai_probability(text)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(GatewayError::Decode(format!("detector probability {p} outside [0, 1]")));
        }
        Ok(p)
    }
}

#[cfg(feature = "http")]
fn remote(cfg: &BackendConfig) -> Result<Arc<http::HttpBackend>, GatewayError> {
    Ok(Arc::new(http::HttpBackend::new(cfg.clone())?))
}

#[cfg(not(feature = "http"))]
fn remote(cfg: &BackendConfig) -> Result<Arc<MockBackend>, GatewayError> {
    Err(GatewayError::InvalidRequest(format!(
        "endpoint {} needs the `http` feature",
        cfg.endpoint
    )))
}
