use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{validate_request, BackendError, CallLog, CallRecord, ChatBackend, ChatMessage, CompletionParams, Role};

pub const ENV_API_BASE: &str = "PERSONA_AGENT_API_BASE";
pub const ENV_API_KEY: &str = "PERSONA_AGENT_API_KEY";
pub const ENV_MODEL: &str = "PERSONA_AGENT_MODEL";

/// Request/response translation used for an HTTP endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireFormat {
    /// `POST {base}/chat/completions`, OpenAI chat-completions JSON.
    #[default]
    OpenAi,
    /// `POST {base}/v1/messages`, Anthropic messages JSON.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub api_base: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub wire: WireFormat,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Backoff before the single retry on transient failures.
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_timeout() -> u64 {
    120
}

fn default_backoff() -> u64 {
    1000
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            model: model.into(),
            api_key: None,
            wire: WireFormat::OpenAi,
            timeout_secs: default_timeout(),
            retry_backoff_ms: default_backoff(),
        }
    }

    /// Reads `PERSONA_AGENT_API_BASE`, `PERSONA_AGENT_API_KEY` and
    /// `PERSONA_AGENT_MODEL`. Returns `None` when base or model is unset.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var(ENV_API_BASE).ok()?;
        let model = std::env::var(ENV_MODEL).ok()?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Some(cfg)
    }

    fn endpoint(&self) -> String {
        let base = self.api_base.trim_end_matches('/');
        match self.wire {
            WireFormat::OpenAi => format!("{base}/chat/completions"),
            WireFormat::Anthropic => format!("{base}/v1/messages"),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    log: CallLog,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint())
            .field("model", &self.config.model)
            .finish()
    }
}

enum Attempt {
    Done(String),
    Transient(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self {
            config,
            agent,
            log: CallLog::default(),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn request_body(&self, messages: &[ChatMessage], params: &CompletionParams) -> Value {
        match self.config.wire {
            WireFormat::OpenAi => {
                let msgs: Vec<Value> = messages
                    .iter()
                    .map(|m| {
                        let role = match m.role {
                            Role::Tool => "user",
                            other => role_name(other),
                        };
                        json!({"role": role, "content": m.content})
                    })
                    .collect();
                let mut body = json!({
                    "model": self.config.model,
                    "messages": msgs,
                    "temperature": params.temperature,
                    "max_tokens": params.max_tokens,
                });
                if !params.stop_sequences.is_empty() {
                    body["stop"] = json!(params.stop_sequences);
                }
                body
            }
            WireFormat::Anthropic => {
                let system: Vec<&str> = messages
                    .iter()
                    .filter(|m| m.role == Role::System)
                    .map(|m| m.content.as_str())
                    .collect();
                let msgs: Vec<Value> = messages
                    .iter()
                    .filter(|m| m.role != Role::System)
                    .map(|m| {
                        let role = if m.role == Role::Assistant { "assistant" } else { "user" };
                        json!({"role": role, "content": m.content})
                    })
                    .collect();
                let mut body = json!({
                    "model": self.config.model,
                    "messages": msgs,
                    "temperature": params.temperature,
                    "max_tokens": params.max_tokens,
                });
                if !system.is_empty() {
                    body["system"] = json!(system.join("\n\n"));
                }
                if !params.stop_sequences.is_empty() {
                    body["stop_sequences"] = json!(params.stop_sequences);
                }
                body
            }
        }
    }

    fn extract_text(&self, body: &Value) -> Result<String, BackendError> {
        let text = match self.config.wire {
            WireFormat::OpenAi => body.pointer("/choices/0/message/content").and_then(Value::as_str),
            WireFormat::Anthropic => body.pointer("/content/0/text").and_then(Value::as_str),
        };
        text.map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse(truncate(&body.to_string(), 200)))
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.config.endpoint());
        if let Some(key) = &self.config.api_key {
            req = match self.config.wire {
                WireFormat::OpenAi => req.header("Authorization", &format!("Bearer {key}")),
                WireFormat::Anthropic => req.header("x-api-key", key),
            };
        }
        if self.config.wire == WireFormat::Anthropic {
            req = req.header("anthropic-version", "2023-06-01");
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => match serde_json::from_str::<Value>(&text) {
                Ok(v) => match self.extract_text(&v) {
                    Ok(s) => Attempt::Done(s),
                    Err(e) => Attempt::Fatal(e),
                },
                Err(e) => Attempt::Fatal(BackendError::MalformedResponse(e.to_string())),
            },
            429 => Attempt::Transient(BackendError::RateLimited),
            500..=599 => Attempt::Transient(BackendError::Http {
                status,
                body: truncate(&text, 200),
            }),
            _ => Attempt::Fatal(BackendError::Http {
                status,
                body: truncate(&text, 200),
            }),
        }
    }

    fn send(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError> {
        validate_request(messages)?;
        let body = self.request_body(messages, params);
        match self.attempt(&body) {
            Attempt::Done(s) => Ok(s),
            Attempt::Fatal(e) => Err(e),
            Attempt::Transient(first) => {
                tracing::warn!(error = %first, "transient backend failure, retrying once");
                thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
                match self.attempt(&body) {
                    Attempt::Done(s) => Ok(s),
                    Attempt::Fatal(e) | Attempt::Transient(e) => Err(e),
                }
            }
        }
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError> {
        let outcome = self.send(messages, params);
        self.log.record(messages, &outcome);
        outcome
    }

    fn call_log(&self) -> Vec<CallRecord> {
        self.log.snapshot()
    }

    fn call_count(&self) -> usize {
        self.log.len()
    }
}
