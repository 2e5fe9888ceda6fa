//! The agent's two tools: a general knowledge lookup (Wikipedia summaries)
//! and retrieval over the user's own episodic memory.
//!
//! Tools never fail with an error. Every problem becomes a `ToolResult` with
//! `ok == false` whose text is fed back to the agent as an observation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::Encoder;
use crate::memory::EpisodicBuffer;
use crate::model::InteractionRecord;

pub const WIKIPEDIA: &str = "wikipedia";
pub const USER_MEMORY: &str = "user_memory";

pub const WIKIPEDIA_DESCRIPTION: &str = "\
Use this tool to get a brief summary from Wikipedia about a specific topic.
Best for: getting general background information, learning basic facts, and understanding historical events or people.
Input: a clear, specific topic name (e.g., 'Albert Einstein', 'World War II').
Output: returns a concise Wikipedia summary.
Note: use precise topic names for better results.";

pub const USER_MEMORY_DESCRIPTION: &str = "\
Retrieve top-k relevant items/histories from the user memory using RAG (Retrieval-Augmented Generation).
Best for: finding detailed information on related items, answering specific questions from personal data, and incorporating user preferences into the final answer.
Input: a specific search query or question about the content.
Output: relevant interaction histories from the user memory.
Note: more specific queries yield more accurate results.
Requirement: must use this tool at least once to answer the question.";

pub const NO_ARTICLE: &str = "no article found";
pub const NO_HISTORY: &str = "no user history available";

pub const DEFAULT_WIKIPEDIA_BASE: &str = "https://en.wikipedia.org/api/rest_v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_hint: String,
}

impl ToolSpec {
    pub fn wikipedia() -> Self {
        Self {
            name: WIKIPEDIA.into(),
            description: WIKIPEDIA_DESCRIPTION.into(),
            input_hint: "a clear, specific topic name".into(),
        }
    }

    pub fn user_memory() -> Self {
        Self {
            name: USER_MEMORY.into(),
            description: USER_MEMORY_DESCRIPTION.into(),
            input_hint: "a specific search query or question about the content".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub input: String,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            input: input.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolSource {
    Knowledge,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub output: String,
    pub ok: bool,
    /// `None` when the call could not be routed to any tool.
    pub source: Option<ToolSource>,
}

impl ToolResult {
    pub fn ok(output: impl Into<String>, source: ToolSource) -> Self {
        Self { output: output.into(), ok: true, source: Some(source) }
    }

    pub fn fail(output: impl Into<String>, source: Option<ToolSource>) -> Self {
        Self { output: output.into(), ok: false, source }
    }
}

/// Source of general-knowledge summaries.
pub trait KnowledgeProvider: Send + Sync {
    /// `Ok(None)` for an unknown topic, `Err` for transport problems.
    fn summary(&self, topic: &str) -> Result<Option<String>, String>;
}

/// Title → summary map, the default provider for tests and offline runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OfflineKnowledge {
    entries: BTreeMap<String, String>,
}

impl OfflineKnowledge {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    /// Reads a JSON object mapping titles to summaries.
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl KnowledgeProvider for OfflineKnowledge {
    fn summary(&self, topic: &str) -> Result<Option<String>, String> {
        if let Some(s) = self.entries.get(topic) {
            return Ok(Some(s.clone()));
        }
        let lower = topic.to_lowercase();
        Ok(self
            .entries
            .iter()
            .find(|(k, _)| k.to_lowercase() == lower)
            .map(|(_, v)| v.clone()))
    }
}

/// Live provider backed by the Wikipedia REST page-summary endpoint.
pub struct WikipediaKnowledge {
    base_url: String,
    agent: ureq::Agent,
}

impl WikipediaKnowledge {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(5)))
            .build()
            .into();
        Self { base_url: base_url.into(), agent }
    }

    fn summary_url(&self, topic: &str) -> Result<String, String> {
        let mut url = url::Url::parse(self.base_url.trim_end_matches('/')).map_err(|e| e.to_string())?;
        url.path_segments_mut()
            .map_err(|_| "base url cannot carry a path".to_string())?
            .extend(["page", "summary", &topic.replace(' ', "_")]);
        Ok(url.to_string())
    }
}

impl Default for WikipediaKnowledge {
    fn default() -> Self {
        Self::new(DEFAULT_WIKIPEDIA_BASE)
    }
}

#[derive(Deserialize)]
struct SummaryResponse {
    #[serde(default)]
    extract: String,
}

impl KnowledgeProvider for WikipediaKnowledge {
    fn summary(&self, topic: &str) -> Result<Option<String>, String> {
        let url = self.summary_url(topic)?;
        let mut resp = self
            .agent
            .get(&url)
            .header("Accept", "application/json")
            .call()
            .map_err(|e| e.to_string())?;
        match resp.status().as_u16() {
            404 => Ok(None),
            200..=299 => {
                let body: SummaryResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
                Ok(Some(body.extract).filter(|s| !s.trim().is_empty()))
            }
            status => Err(format!("wikipedia returned HTTP {status}")),
        }
    }
}

/// Looks up a short summary of `topic`.
pub fn knowledge_lookup(topic: &str, provider: &dyn KnowledgeProvider) -> ToolResult {
    let topic = topic.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    if topic.is_empty() {
        return ToolResult::fail("empty topic; provide a specific topic name", Some(ToolSource::Knowledge));
    }
    match provider.summary(topic) {
        Ok(Some(s)) => ToolResult::ok(s, ToolSource::Knowledge),
        Ok(None) => ToolResult::fail(format!("{NO_ARTICLE} for \"{topic}\""), Some(ToolSource::Knowledge)),
        Err(e) => ToolResult::fail(format!("knowledge lookup failed: {e}"), Some(ToolSource::Knowledge)),
    }
}

/// Renders retrieved interactions the way the agent sees them.
pub fn render_memories<'a>(records: impl IntoIterator<Item = &'a InteractionRecord>) -> String {
    records
        .into_iter()
        .map(|r| format!("Past Q: {}\nUser's answer: {}", r.query, r.ground_truth))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Retrieves the top-`k` interactions for `query`, skipping `masked`
/// buffer positions.
pub fn memory_rag(query: &str, buffer: &EpisodicBuffer, k: usize, encoder: &Encoder, masked: &[usize]) -> ToolResult {
    if buffer.is_empty() {
        return ToolResult::fail(NO_HISTORY, Some(ToolSource::Memory));
    }
    match buffer.retrieve_indices(query, k.max(1), encoder, masked) {
        Ok(idx) if idx.is_empty() => ToolResult::fail(NO_HISTORY, Some(ToolSource::Memory)),
        Ok(idx) => ToolResult::ok(
            render_memories(idx.iter().map(|&i| &buffer.records()[i])),
            ToolSource::Memory,
        ),
        Err(e) => ToolResult::fail(format!("memory retrieval failed: {e}"), Some(ToolSource::Memory)),
    }
}

/// Everything a tool invocation may read.
#[derive(Clone, Copy)]
pub struct ToolContext<'a> {
    pub knowledge: &'a dyn KnowledgeProvider,
    pub buffer: &'a EpisodicBuffer,
    pub encoder: &'a Encoder,
    pub k: usize,
    /// Buffer positions hidden from retrieval.
    pub masked: &'a [usize],
}

/// Named set of tools offered to the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl ToolRegistry {
    /// Both tools: knowledge lookup and user memory.
    pub fn standard() -> Self {
        Self { specs: vec![ToolSpec::wikipedia(), ToolSpec::user_memory()] }
    }

    pub fn knowledge_only() -> Self {
        Self { specs: vec![ToolSpec::wikipedia()] }
    }

    /// Fails on duplicate or unsupported names.
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, String> {
        for (i, s) in specs.iter().enumerate() {
            if s.name != WIKIPEDIA && s.name != USER_MEMORY {
                return Err(format!("unsupported tool `{}`", s.name));
            }
            if s.description.trim().is_empty() {
                return Err(format!("tool `{}` has an empty description", s.name));
            }
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(format!("duplicate tool `{}`", s.name));
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.specs.iter().any(|s| s.name == name)
    }

    /// Tool descriptions block inserted into the agent prompt.
    pub fn describe(&self) -> String {
        self.specs
            .iter()
            .map(|s| format!("Tool: {}\n{}", s.name, s.description))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Routes `call` to the named tool. Never panics or errors.
pub fn dispatch(registry: &ToolRegistry, call: &ToolCall, ctx: &ToolContext<'_>) -> ToolResult {
    let name = call.tool_name.trim();
    if !registry.contains(name) {
        return ToolResult::fail(
            format!("unknown tool {name}; available: {}", registry.names().join(", ")),
            None,
        );
    }
    match name {
        WIKIPEDIA => knowledge_lookup(&call.input, ctx.knowledge),
        USER_MEMORY => memory_rag(&call.input, ctx.buffer, ctx.k, ctx.encoder, ctx.masked),
        other => ToolResult::fail(format!("tool {other} has no implementation"), None),
    }
}
