//! Persona-conditioned tool-using agent.
//!
//! An episode is a sequence of backend calls under a fixed system prompt (the
//! persona text). Each reply is parsed with [`parse_action`]; tool calls are
//! dispatched through the registry and their output is fed back as an
//! `Observation:` turn until the model produces a final answer or the step
//! budget runs out.

mod parse;
pub mod prompts;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Encoder;
use crate::llm::{BackendError, ChatBackend, ChatMessage, CompletionParams};
use crate::memory::{EpisodicBuffer, SemanticProfile};
use crate::model::UserId;
use crate::text::{count_word, render};
use crate::tools::{dispatch, KnowledgeProvider, ToolCall, ToolContext, ToolRegistry, ToolResult, USER_MEMORY};

pub use parse::parse_action;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("model ignored the action protocol twice in a row; last output: {last_output:?}")]
    Protocol { last_output: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("trajectory log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

/// User-specific system prompt with its revision history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub user: UserId,
    pub text: String,
    /// Number of updates applied so far; always `history.len()`.
    pub version: usize,
    pub history: Vec<String>,
}

impl Persona {
    pub fn new(user: UserId, text: impl Into<String>) -> Self {
        Self { user, text: text.into(), version: 0, history: Vec::new() }
    }

    /// Installs a new text, archiving the current one.
    pub fn replace_text(&mut self, text: impl Into<String>) {
        let old = std::mem::replace(&mut self.text, text.into());
        self.history.push(old);
        self.version += 1;
    }

    /// The persona text as it was at `version`.
    pub fn text_at(&self, version: usize) -> Option<&str> {
        match version.cmp(&self.version) {
            std::cmp::Ordering::Less => self.history.get(version).map(String::as_str),
            std::cmp::Ordering::Equal => Some(&self.text),
            std::cmp::Ordering::Greater => None,
        }
    }
}

/// Version-0 persona built from the user's semantic profile.
pub fn init_persona(user: UserId, profile: &SemanticProfile) -> Persona {
    init_persona_from_summary(user, &profile.text)
}

pub fn init_persona_from_summary(user: UserId, summary: &str) -> Persona {
    let summary = if summary.trim().is_empty() { prompts::NO_PROFILE_SUMMARY } else { summary.trim() };
    Persona::new(user, render(prompts::PERSONA_TEMPLATE, &[("summary", summary)]))
}

/// One element of an episode trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentStep {
    Thought {
        text: String,
    },
    Action {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thought: Option<String>,
        call: ToolCall,
    },
    Observation {
        result: ToolResult,
    },
    FinalAnswer {
        text: String,
        /// Set when the answer was accepted without satisfying the loop's
        /// requirements (step budget or tool rule).
        #[serde(default)]
        forced: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    /// Answered after the tool-rule re-prompt without meeting the rule.
    ToolRuleUnmet,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub persona_version: usize,
    pub steps: Vec<AgentStep>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn final_answer(&self) -> &str {
        match self.steps.last() {
            Some(AgentStep::FinalAnswer { text, .. }) => text,
            _ => "",
        }
    }

    pub fn forced(&self) -> bool {
        self.termination != Termination::Answered
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().filter_map(|s| match s {
            AgentStep::Action { call, .. } => Some(call),
            _ => None,
        })
    }

    pub fn observations(&self) -> impl Iterator<Item = &ToolResult> {
        self.steps.iter().filter_map(|s| match s {
            AgentStep::Observation { result } => Some(result),
            _ => None,
        })
    }

    /// Checks the pairing and termination invariants.
    pub fn is_well_formed(&self, max_steps: usize) -> bool {
        let n = self.steps.len();
        if n == 0 || n > 2 * max_steps + 1 {
            return false;
        }
        let finals = self.steps.iter().filter(|s| matches!(s, AgentStep::FinalAnswer { .. })).count();
        if finals != 1 || !matches!(self.steps[n - 1], AgentStep::FinalAnswer { .. }) {
            return false;
        }
        self.steps.iter().enumerate().all(|(i, s)| match s {
            AgentStep::Action { .. } => matches!(self.steps.get(i + 1), Some(AgentStep::Observation { .. })),
            AgentStep::Observation { .. } => i > 0 && matches!(self.steps[i - 1], AgentStep::Action { .. }),
            _ => true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_steps: usize,
    pub min_tool_calls: usize,
    pub k_memory: usize,
    /// Require at least one `user_memory` call when that tool is offered.
    pub require_memory_tool: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { max_steps: 8, min_tool_calls: 2, k_memory: 4, require_memory_tool: true }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::Config("max_steps must be positive".into()));
        }
        if self.k_memory == 0 {
            return Err(AgentError::Config("k_memory must be positive".into()));
        }
        if self.min_tool_calls > self.max_steps {
            return Err(AgentError::Config(format!(
                "min_tool_calls ({}) exceeds max_steps ({})",
                self.min_tool_calls, self.max_steps
            )));
        }
        Ok(())
    }

    /// Plain tool-using agent without minimum-tool requirements.
    pub fn unconstrained(self) -> Self {
        Self { min_tool_calls: 0, require_memory_tool: false, ..self }
    }
}

/// Shared, read-only inputs of an episode.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub llm: &'a dyn ChatBackend,
    pub knowledge: &'a dyn KnowledgeProvider,
    pub encoder: &'a Encoder,
    pub registry: &'a ToolRegistry,
    pub params: &'a CompletionParams,
    pub config: RunConfig,
}

/// Text sent when the model answers before satisfying the tool rule.
pub fn enforcement_message(config: &RunConfig, registry: &ToolRegistry) -> String {
    let noun = if config.min_tool_calls == 1 { "tool" } else { "tools" };
    let mut msg = format!(
        "You must use at least {} {noun} before answering.",
        count_word(config.min_tool_calls)
    );
    if config.require_memory_tool && registry.contains(USER_MEMORY) {
        msg.push_str(&format!(" You must use the {USER_MEMORY} tool at least once."));
    }
    msg.push_str(" Continue with Thought / Action / Action Input.");
    msg
}

/// First user turn of an episode.
pub fn episode_prompt(registry: &ToolRegistry, query: &str) -> String {
    render(
        prompts::EPISODE_TEMPLATE,
        &[
            ("tools", &registry.describe()),
            ("tool_names", &registry.names().join(", ")),
            ("question", query),
        ],
    )
}

/// Runs one think/act/observe episode for `query`.
///
/// `masked` lists buffer positions hidden from the memory tool.
pub fn run_episode(
    env: &AgentEnv<'_>,
    persona: &Persona,
    query: &str,
    buffer: &EpisodicBuffer,
    masked: &[usize],
) -> Result<Trajectory, AgentError> {
    let config = env.config;
    config.validate()?;
    let ctx = ToolContext {
        knowledge: env.knowledge,
        buffer,
        encoder: env.encoder,
        k: config.k_memory,
        masked,
    };
    let params = env.params.clone().with_stop(format!("\n{}", prompts::OBSERVATION_PREFIX.trim_end()));
    let memory_required = config.require_memory_tool && env.registry.contains(USER_MEMORY);

    let mut messages = vec![ChatMessage::system(persona.text.clone()), ChatMessage::user(episode_prompt(env.registry, query))];
    let mut steps = Vec::new();
    let mut tool_calls = 0usize;
    let mut memory_calls = 0usize;
    let mut reminded = false;
    let mut enforced = false;
    let mut last_thought = String::new();

    let finish = |mut steps: Vec<AgentStep>, text: String, termination: Termination| {
        steps.push(AgentStep::FinalAnswer { text, forced: termination != Termination::Answered });
        Trajectory { query: query.to_string(), persona_version: persona.version, steps, termination }
    };

    for _ in 0..config.max_steps {
        let output = env.llm.complete(&messages, &params)?;
        let assistant_turn = if output.trim().is_empty() { "(empty reply)".to_string() } else { output.clone() };
        messages.push(ChatMessage::assistant(assistant_turn));

        match parse_action(&output) {
            AgentStep::Action { thought, call } => {
                reminded = false;
                let result = dispatch(env.registry, &call, &ctx);
                if result.source.is_some() {
                    tool_calls += 1;
                    if call.tool_name.trim() == USER_MEMORY {
                        memory_calls += 1;
                    }
                }
                if let Some(t) = &thought {
                    last_thought = t.clone();
                }
                messages.push(ChatMessage::user(format!("{}{}", prompts::OBSERVATION_PREFIX, result.output)));
                steps.push(AgentStep::Action { thought, call });
                steps.push(AgentStep::Observation { result });
            }
            AgentStep::FinalAnswer { text, .. } => {
                reminded = false;
                let satisfied = tool_calls >= config.min_tool_calls && (!memory_required || memory_calls > 0);
                if satisfied {
                    return Ok(finish(steps, text, Termination::Answered));
                }
                if enforced {
                    return Ok(finish(steps, text, Termination::ToolRuleUnmet));
                }
                enforced = true;
                steps.push(AgentStep::Thought { text: output.trim().to_string() });
                messages.push(ChatMessage::user(enforcement_message(&config, env.registry)));
            }
            AgentStep::Thought { text } => {
                if reminded {
                    return Err(AgentError::Protocol { last_output: output });
                }
                reminded = true;
                last_thought = text.clone();
                steps.push(AgentStep::Thought { text });
                messages.push(ChatMessage::user(prompts::PROTOCOL_REMINDER));
            }
            AgentStep::Observation { .. } => unreachable!("parser never yields observations"),
        }
    }
    tracing::debug!(query, "step budget exhausted; forcing answer from last thought");
    Ok(finish(steps, last_thought, Termination::BudgetExhausted))
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader<'a> {
    kind: &'a str,
    query: String,
    persona_version: usize,
    termination: Termination,
}

/// Writes `<dir>/<user>/<query_index>.traj.jsonl`: a header line, then one
/// step per line.
pub fn write_trajectory(dir: &Path, user: &UserId, query_index: usize, traj: &Trajectory) -> Result<PathBuf, AgentError> {
    let user_dir = dir.join(user.as_str());
    let path = user_dir.join(format!("{query_index}.traj.jsonl"));
    let log_err = |e: &dyn std::fmt::Display| AgentError::Log { path: path.clone(), message: e.to_string() };
    fs::create_dir_all(&user_dir).map_err(|e| log_err(&e))?;
    let mut out = Vec::new();
    let header = EpisodeHeader {
        kind: "episode",
        query: traj.query.clone(),
        persona_version: traj.persona_version,
        termination: traj.termination,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| log_err(&e))?;
    out.push(b'\n');
    for step in &traj.steps {
        serde_json::to_writer(&mut out, step).map_err(|e| log_err(&e))?;
        out.push(b'\n');
    }
    fs::File::create(&path).and_then(|mut f| f.write_all(&out)).map_err(|e| log_err(&e))?;
    Ok(path)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, AgentError> {
    let log_err = |m: String| AgentError::Log { path: path.to_path_buf(), message: m };
    let file = fs::File::open(path).map_err(|e| log_err(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| log_err("empty file".into()))?
        .map_err(|e| log_err(e.to_string()))?;
    let header: EpisodeHeader = serde_json::from_str(&header_line).map_err(|e| log_err(format!("line 1: {e}")))?;
    if header.kind != "episode" {
        return Err(log_err("line 1: missing episode header".into()));
    }
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| log_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| log_err(format!("line {}: {e}", i + 2)))?);
    }
    Ok(Trajectory {
        query: header.query,
        persona_version: header.persona_version,
        steps,
        termination: header.termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptedBackend, ScriptedFixture};
    use crate::model::{InteractionRecord, Metadata, TaskKind};
    use crate::tools::{OfflineKnowledge, NO_ARTICLE};

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn buffer(user: &str, items: &[(&str, &str)]) -> (EpisodicBuffer, Encoder) {
        let enc = Encoder::default();
        let recs = items
            .iter()
            .enumerate()
            .map(|(i, (q, a))| InteractionRecord::new(*q, *a, Metadata::at(i as u64)).unwrap())
            .collect();
        (EpisodicBuffer::from_records(uid(user), recs, &enc).unwrap(), enc)
    }

    struct Fixture {
        llm: ScriptedBackend,
        knowledge: OfflineKnowledge,
        registry: ToolRegistry,
        params: CompletionParams,
    }

    impl Fixture {
        fn new(fixture: ScriptedFixture) -> Self {
            Self {
                llm: ScriptedBackend::new(fixture).unwrap(),
                knowledge: OfflineKnowledge::new([("Casablanca".to_string(), "1942 film".to_string())]),
                registry: ToolRegistry::standard(),
                params: CompletionParams::default(),
            }
        }

        fn env(&self, config: RunConfig) -> AgentEnv<'_> {
            static ENC: std::sync::OnceLock<Encoder> = std::sync::OnceLock::new();
            AgentEnv {
                llm: &self.llm,
                knowledge: &self.knowledge,
                encoder: ENC.get_or_init(Encoder::default),
                registry: &self.registry,
                params: &self.params,
                config,
            }
        }
    }

    fn two_tool_script() -> ScriptedFixture {
        ScriptedFixture::default()
            .regex(r"(?s)Observation: .*Observation: ", "Thought: done\nFinal Answer: classic")
            .contains("Observation: ", "Thought: look it up\nAction: wikipedia\nAction Input: Casablanca")
            .with_default("Thought: need history\nAction: user_memory\nAction Input: noir films")
    }

    fn profile(text: &str) -> SemanticProfile {
        SemanticProfile {
            user: uid("u"),
            text: text.into(),
            source_count: 1,
            created_at: 0,
            task: TaskKind::MovieTagging,
        }
    }

    #[test]
    fn persona_template_substitution() {
        let p = init_persona(uid("u"), &profile("likes noir films"));
        assert!(p.text.contains("User summary: likes noir films"));
        assert_eq!(p.version, 0);
        for line in [
            "STRICT RULES: when using tools, always:",
            "1. Think step-by-step about what information you need.",
            "2. MUST use at least TWO tools to answer the question.",
            "3. Use tools precisely and deliberately and try to get the most accurate information from different tools.",
            "4. Provide clear, concise responses. Do not give explanation in the final answer.",
        ] {
            assert!(p.text.contains(line), "missing {line}");
        }
        let q = init_persona(uid("v"), &profile("prefers comedies"));
        assert_ne!(p.text, q.text);
        assert_eq!(
            p.text.replace("likes noir films", "@"),
            q.text.replace("prefers comedies", "@")
        );
    }

    #[test]
    fn persona_versioning() {
        let mut p = Persona::new(uid("u"), "a");
        p.replace_text("b");
        p.replace_text("b");
        assert_eq!(p.version, 2);
        assert_eq!(p.history, ["a", "b"]);
        assert_eq!(p.text_at(0), Some("a"));
        assert_eq!(p.text_at(2), Some("b"));
        assert_eq!(p.text_at(3), None);
    }

    #[test]
    fn two_tools_then_answer() {
        let f = Fixture::new(two_tool_script());
        let (buf, _) = buffer("u", &[("noir films", "classic")]);
        let persona = Persona::new(uid("u"), "PERSONA");
        let t = run_episode(&f.env(RunConfig::default()), &persona, "Tag Casablanca", &buf, &[]).unwrap();
        let kinds: Vec<_> = t
            .steps
            .iter()
            .map(|s| match s {
                AgentStep::Action { call, .. } => call.tool_name.as_str(),
                AgentStep::Observation { .. } => "obs",
                AgentStep::FinalAnswer { .. } => "final",
                AgentStep::Thought { .. } => "thought",
            })
            .collect();
        assert_eq!(kinds, ["user_memory", "obs", "wikipedia", "obs", "final"]);
        assert_eq!(t.final_answer(), "classic");
        assert_eq!(t.termination, Termination::Answered);
        assert!(t.is_well_formed(8));
        assert_eq!(f.llm.call_count(), 3);
        for call in f.llm.call_log() {
            assert_eq!(call.system_message(), Some("PERSONA"));
        }
    }

    #[test]
    fn unstructured_output_gets_one_reminder() {
        let f = Fixture::new(
            ScriptedFixture::default()
                .contains("did not follow the required format", "Final Answer: classic")
                .with_default("I think the answer is classic"),
        );
        let (buf, _) = buffer("u", &[("q", "a")]);
        let cfg = RunConfig::default().unconstrained();
        let t = run_episode(&f.env(cfg), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        assert_eq!(f.llm.call_count(), 2);
        assert_eq!(t.final_answer(), "classic");
        assert!(matches!(t.steps[0], AgentStep::Thought { .. }));
    }

    #[test]
    fn repeated_protocol_violation_errors() {
        let f = Fixture::new(ScriptedFixture::default().with_default("no markers here"));
        let (buf, _) = buffer("u", &[("q", "a")]);
        let err = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap_err();
        assert!(matches!(err, AgentError::Protocol { .. }));
        assert_eq!(f.llm.call_count(), 2);
    }

    #[test]
    fn early_answer_is_reprompted_once() {
        let f = Fixture::new(
            ScriptedFixture::default()
                .regex(r"(?s)Observation: .*Observation: ", "Final Answer: classic")
                .contains("Observation: ", "Action: wikipedia\nAction Input: Casablanca")
                .contains("You must use at least two tools before answering", "Action: user_memory\nAction Input: noir")
                .with_default("Final Answer: guess"),
        );
        let (buf, _) = buffer("u", &[("noir", "classic")]);
        let t = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        assert_eq!(t.tool_calls().count(), 2);
        assert_eq!(t.final_answer(), "classic");
        assert_eq!(t.termination, Termination::Answered);
        assert!(t.is_well_formed(8));
    }

    #[test]
    fn rule_unmet_answer_is_flagged() {
        let f = Fixture::new(ScriptedFixture::default().with_default("Final Answer: guess"));
        let (buf, _) = buffer("u", &[("q", "a")]);
        let t = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        assert_eq!(f.llm.call_count(), 2);
        assert_eq!(t.termination, Termination::ToolRuleUnmet);
        assert!(t.forced());
        assert_eq!(t.final_answer(), "guess");
    }

    #[test]
    fn memory_tool_is_required_when_offered() {
        let f = Fixture::new(
            ScriptedFixture::default()
                .contains("must use the user_memory tool", "Final Answer: x")
                .regex(r"(?s)Observation: .*Observation: ", "Final Answer: x")
                .with_default("Action: wikipedia\nAction Input: Casablanca"),
        );
        let (buf, _) = buffer("u", &[("q", "a")]);
        let t = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        assert_eq!(t.termination, Termination::ToolRuleUnmet);
    }

    #[test]
    fn budget_exhaustion_forces_answer() {
        let f = Fixture::new(ScriptedFixture::default().with_default("Thought: hmm\nAction: wikipedia\nAction Input: x"));
        let (buf, _) = buffer("u", &[("q", "a")]);
        let cfg = RunConfig { max_steps: 1, min_tool_calls: 1, ..RunConfig::default() };
        let t = run_episode(&f.env(cfg), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        assert!(t.forced());
        assert_eq!(t.termination, Termination::BudgetExhausted);
        assert!(t.steps.len() <= 3);
        assert_eq!(t.final_answer(), "hmm");
        assert!(t.is_well_formed(1));
    }

    #[test]
    fn unknown_tool_does_not_count() {
        let f = Fixture::new(ScriptedFixture::default().with_default("Action: calculator\nAction Input: 1+1"));
        let (buf, _) = buffer("u", &[("q", "a")]);
        let cfg = RunConfig { max_steps: 2, ..RunConfig::default() };
        let t = run_episode(&f.env(cfg), &Persona::new(uid("u"), "P"), "q?", &buf, &[]).unwrap();
        let first = t.observations().next().unwrap();
        assert!(!first.ok);
        assert!(first.output.contains("available: wikipedia, user_memory"));
    }

    #[test]
    fn masked_record_is_not_observed() {
        let f = Fixture::new(two_tool_script());
        let (buf, _) = buffer("u", &[("noir films", "SECRET-A"), ("noir films again", "SECRET-B")]);
        let t = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q?", &buf, &[0]).unwrap();
        let obs: String = t.observations().map(|o| o.output.as_str()).collect();
        assert!(!obs.contains("SECRET-A"));
        assert!(obs.contains("SECRET-B"));
    }

    #[test]
    fn replay_is_identical() {
        let (buf, _) = buffer("u", &[("noir films", "classic")]);
        let run = || {
            let f = Fixture::new(two_tool_script());
            run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q", &buf, &[]).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig { min_tool_calls: 9, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { max_steps: 0, min_tool_calls: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn trajectory_log_round_trip() {
        let f = Fixture::new(two_tool_script());
        let (buf, _) = buffer("u", &[("noir films", "classic")]);
        let t = run_episode(&f.env(RunConfig::default()), &Persona::new(uid("u"), "P"), "q", &buf, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_trajectory(dir.path(), &uid("u"), 3, &t).unwrap();
        assert_eq!(path, dir.path().join("u").join("3.traj.jsonl"));
        let raw = fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), t.steps.len() + 1);
        assert_eq!(read_trajectory(&path).unwrap(), t);
    }

    #[test]
    fn knowledge_miss_is_observation() {
        let f = Fixture::new(
            ScriptedFixture::default()
                .contains("Observation: ", "Final Answer: x")
                .with_default("Action: wikipedia\nAction Input: Nonexistent Page"),
        );
        let (buf, _) = buffer("u", &[("q", "a")]);
        let t = run_episode(&f.env(RunConfig::default().unconstrained()), &Persona::new(uid("u"), "P"), "q", &buf, &[]).unwrap();
        assert!(t.observations().next().unwrap().output.starts_with(NO_ARTICLE));
    }
}
