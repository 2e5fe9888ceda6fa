//! Chat-completion backends.
//!
//! Everything that talks to a language model goes through [`ChatBackend`].
//! Two implementations ship here: [`HttpBackend`] for live OpenAI- or
//! Anthropic-style endpoints and [`ScriptedBackend`], a deterministic
//! rule table used by tests and offline benchmark runs. Both keep a call log
//! of every request/response pair.

mod http;
mod scripted;

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, WireFormat, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use scripted::{FixtureError, ScriptedBackend, ScriptedFixture, ScriptedRule};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by backend after retry")]
    RateLimited,
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no scripted rule matches prompt starting with {0:?}")]
    NoMatchingRule(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    512
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: default_max_tokens(),
            stop_sequences: Vec::new(),
        }
    }
}

impl CompletionParams {
    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }
}

/// One logged backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
}

impl CallRecord {
    /// The request flattened the same way scripted rules see it.
    pub fn prompt(&self) -> String {
        render_prompt(&self.messages)
    }

    pub fn system_message(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

/// Flattens a conversation into one string: `[role]\ncontent` blocks
/// separated by blank lines.
pub fn render_prompt(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("[{}]\n{}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Append-only, thread-safe call log.
#[derive(Debug, Default)]
pub struct CallLog(Mutex<Vec<CallRecord>>);

impl CallLog {
    pub fn record(&self, messages: &[ChatMessage], outcome: &Result<String, BackendError>) {
        let entry = CallRecord {
            messages: messages.to_vec(),
            response: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        self.0.lock().expect("call log poisoned").push(entry);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.0.lock().expect("call log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.0.lock().expect("call log poisoned").clear();
    }
}

/// A chat model. Implementations must be shareable across threads and must
/// append every call, successful or not, to their call log.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String, BackendError>;

    fn call_log(&self) -> Vec<CallRecord>;

    fn call_count(&self) -> usize {
        self.call_log().len()
    }
}

pub(crate) fn validate_request(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidRequest("no messages".into()));
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty() && m.role != Role::Tool) {
        return Err(BackendError::InvalidRequest(format!("message {i} has empty content")));
    }
    Ok(())
}
