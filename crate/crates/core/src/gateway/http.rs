//! Blocking HTTP backend speaking a chat-completions-style JSON protocol.
//!
//! Routes, relative to the configured endpoint:
//!
//! - `POST /chat`   `{model, messages:[{role, content}], temperature, max_tokens, seed?}`
//!   answered with `{choices:[{message:{content}}]}`
//! - `POST /embed`  `{model, input:[..], channel}` answered with `{data:[{embedding:[..]}]}`
//! - `POST /detect` `{model, input}` answered with `{probability}`
//!
//! Requests carry `Authorization: Bearer $TOKEN` when `auth_env` is set.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    BackendConfig, ChatBackend, ChatRequest, Channel, Detector, EmbedBackend, EmbeddingVector,
    GatewayError,
};

/// Token bucket holding a single token: callers are spaced at least
/// `1 / rate` seconds apart, across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: Mutex::new(None),
        }
    }

    /// Blocks until the caller may issue a request.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

enum Failure {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    token: Option<String>,
    limiter: RateLimiter,
    retries: AtomicU64,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let token = match &cfg.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(HttpBackend {
            limiter: RateLimiter::new(cfg.rate_limit),
            cfg,
            agent,
            token,
            retries: AtomicU64::new(0),
        })
    }

    /// Retries performed so far, over all calls.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        self.limiter.acquire();
        let mut req = self.agent.post(url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Retryable(GatewayError::Timeout)),
            Err(e) => return Err(Failure::Retryable(GatewayError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| Failure::Fatal(GatewayError::Decode(e.to_string())));
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let err = GatewayError::Backend { status, body: text };
        match status {
            401 | 403 => Err(Failure::Fatal(GatewayError::Auth(format!("status {status}")))),
            429 | 500 | 502 | 503 | 504 => Err(Failure::Retryable(err)),
            _ => Err(Failure::Fatal(err)),
        }
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    fn post(&self, route: &str, body: Value) -> Result<Value, GatewayError> {
        let url = self.url(route);
        let attempts = self.cfg.retry.max_attempts;
        let mut last = GatewayError::Timeout;
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                let backoff = self.cfg.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                debug!(%url, attempt, backoff, "retrying");
                std::thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    warn!(%url, attempt, error = %e, "transient backend failure");
                    last = e;
                }
            }
        }
        Err(match last {
            GatewayError::Backend { status: 429, .. } => GatewayError::RateLimited { attempts },
            other => other,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct DetectResponse {
    probability: f64,
}

fn decode<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, GatewayError> {
    serde_json::from_value(v).map_err(|e| GatewayError::Decode(e.to_string()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let mut messages = Vec::with_capacity(req.messages.len() + 1);
        if let Some(s) = &req.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        for m in &req.messages {
            messages.push(json!({"role": m.role.as_str(), "content": m.text}));
        }
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let resp: ChatResponse = decode(self.post("chat", body)?)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Decode("no choices in response".into()))
    }
}

impl EmbedBackend for HttpBackend {
    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn embed(&self, texts: &[&str], channel: Channel) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": self.cfg.model, "input": texts, "channel": channel });
        let resp: EmbedResponse = decode(self.post("embed", body)?)?;
        Ok(resp
            .data
            .into_iter()
            .map(|d| EmbeddingVector {
                values: d.embedding,
                channel,
                normalized: false,
            })
            .collect())
    }
}

impl Detector for HttpBackend {
    fn ai_probability(&self, text: &str) -> Result<f64, GatewayError> {
        let body = json!({ "model": self.cfg.model, "input": text });
        let resp: DetectResponse = decode(self.post("detect", body)?)?;
        Ok(resp.probability)
    }
}
