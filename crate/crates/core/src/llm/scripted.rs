use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render_prompt, validate_request, BackendError, CallLog, CallRecord, ChatBackend, ChatMessage, CompletionParams};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid fixture JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule {index} has an invalid regex: {source}")]
    Regex {
        index: usize,
        #[source]
        source: regex::Error,
    },
}

/// One `(matcher, response)` rule. `match` is a substring unless `is_regex`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub is_regex: bool,
    pub response: String,
}

/// On-disk fixture: `{"rules": [...], "default": null}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFixture {
    #[serde(default)]
    pub rules: Vec<ScriptedRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let raw = fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn contains(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptedRule {
            pattern: needle.into(),
            is_regex: false,
            response: response.into(),
        });
        self
    }

    pub fn regex(mut self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptedRule {
            pattern: pattern.into(),
            is_regex: true,
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }
}

#[derive(Debug)]
enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn is_match(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

/// Deterministic rule-table backend. The rendered prompt (see
/// [`render_prompt`]) is tested against each rule in order; the first match
/// wins, then the default, otherwise the call fails.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<(Matcher, String)>,
    default: Option<String>,
    log: CallLog,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Result<Self, FixtureError> {
        let rules = fixture
            .rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                let matcher = if rule.is_regex {
                    Matcher::Pattern(Regex::new(&rule.pattern).map_err(|source| FixtureError::Regex { index, source })?)
                } else {
                    Matcher::Substring(rule.pattern)
                };
                Ok((matcher, rule.response))
            })
            .collect::<Result<_, FixtureError>>()?;
        Ok(Self {
            rules,
            default: fixture.default,
            log: CallLog::default(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, FixtureError> {
        Self::new(ScriptedFixture::load(path)?)
    }

    /// Backend that answers every prompt with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(ScriptedFixture::default().with_default(response)).expect("no regex to compile")
    }

    fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        self.rules
            .iter()
            .find(|(m, _)| m.is_match(prompt))
            .map(|(_, r)| r.clone())
            .or_else(|| self.default.clone())
            .ok_or_else(|| BackendError::NoMatchingRule(prompt.chars().take(120).collect()))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &CompletionParams) -> Result<String, BackendError> {
        let outcome = validate_request(messages).and_then(|_| self.respond(&render_prompt(messages)));
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
