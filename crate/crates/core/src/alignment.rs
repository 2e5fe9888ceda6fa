//! Test-time preference alignment.
//!
//! Each iteration replays the user's latest interactions under the current
//! persona, asks a critic model how the persona should change for every
//! mismatch, and rewrites the persona once from the collected feedback.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, AgentEnv, AgentError, Persona, Trajectory};
use crate::llm::{BackendError, ChatBackend, ChatMessage, CompletionParams};
use crate::memory::{EpisodicBuffer, MemoryError};
use crate::model::UserId;
use crate::text::render;

pub const CRITIC_TEMPLATE: &str = "\
You are a meticulous and critical evaluator of personalized AI agent responses.

Analyze the following and give the feedback on how to improve the system prompt to align with the user's preferences.

Question: {question}

Expected Answer: {ground_truth}

Agent Response: {response}

Your feedback should focus on how to adjust the persona system prompt to tailor the agent\u{2019}s responses to the individual user's unique characteristics. Make sure the feedback is concise and and clear.

Tips:

1. Explain on how to improve the search keywords of tools for this user.

2. Take the user's prior interactions, preferences, and any personalization aspects into consideration.

3. Provide explicit description for user profile and preferences that is not specific to this task.

Feedback:";

pub const UPDATE_TEMPLATE: &str = "\
You are a prompt engineering assistant tasked with refining the personal agent system prompts for improved user preference alignment.

Current system prompt: {persona}

Provided Feedback: {feedback}

Based on the feedback above, generate an updated system prompt that explicitly highlights the user's unique preferences.
Ensure that the prompt instructs the agent to align its responses with the user's preferences, including detailed user profile or preferences.
Please maintain a helpful and clear tone in the system prompt.

New system prompt:";

pub const FEEDBACK_SEPARATOR: &str = "\n---\n";

/// Stand-in for an empty agent answer in the critic prompt.
pub const NO_RESPONSE: &str = "(no answer)";

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("episodic buffer for user {0} is empty")]
    EmptyBuffer(UserId),
    #[error("invalid alignment config: {0}")]
    Config(String),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("no gradients to apply")]
    NoGradients,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("alignment log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub batch_size: usize,
    pub iterations: usize,
    /// Let the simulated episode for record `j` retrieve record `j` itself.
    pub allow_self_retrieval: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self { batch_size: 3, iterations: 1, allow_self_retrieval: false }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        if self.batch_size == 0 {
            return Err(AlignmentError::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(AlignmentError::Config(
                "iterations must be at least 1; disable alignment through the method flags instead".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentItem {
    /// Position of the record in the user's buffer.
    pub record_index: usize,
    pub query: String,
    pub agent_response: String,
    pub ground_truth: String,
    /// Absent when the responder answers without a tool loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentBatch {
    pub items: Vec<AlignmentItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualGradient {
    pub feedback: String,
    pub item_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedResponse {
    pub answer: String,
    pub trajectory: Option<Trajectory>,
}

/// Policy used to replay batch queries under a candidate persona.
pub trait Responder: Sync {
    fn respond(
        &self,
        persona: &Persona,
        query: &str,
        buffer: &EpisodicBuffer,
        masked: &[usize],
    ) -> Result<SimulatedResponse, AlignmentError>;
}

impl Responder for AgentEnv<'_> {
    fn respond(
        &self,
        persona: &Persona,
        query: &str,
        buffer: &EpisodicBuffer,
        masked: &[usize],
    ) -> Result<SimulatedResponse, AlignmentError> {
        let trajectory = run_episode(self, persona, query, buffer, masked)?;
        Ok(SimulatedResponse { answer: trajectory.final_answer().to_string(), trajectory: Some(trajectory) })
    }
}

/// Buffer positions of the `min(n, len)` latest records, oldest first.
pub fn build_batch(buffer: &EpisodicBuffer, n: usize) -> Result<Vec<usize>, AlignmentError> {
    if buffer.is_empty() {
        return Err(AlignmentError::EmptyBuffer(buffer.user().clone()));
    }
    Ok(buffer.latest_indices(n).collect())
}

/// Answers every batch record under `persona`.
pub fn simulate_responses(
    policy: &dyn Responder,
    buffer: &EpisodicBuffer,
    batch: &[usize],
    persona: &Persona,
    allow_self_retrieval: bool,
) -> Result<AlignmentBatch, AlignmentError> {
    let mut items = Vec::with_capacity(batch.len());
    for &j in batch {
        let record = &buffer.records()[j];
        let masked: &[usize] = if allow_self_retrieval { &[] } else { std::slice::from_ref(&j) };
        let response = policy.respond(persona, &record.query, buffer, masked)?;
        items.push(AlignmentItem {
            record_index: j,
            query: record.query.clone(),
            agent_response: response.answer,
            ground_truth: record.ground_truth.clone(),
            trajectory: response.trajectory,
        });
    }
    Ok(AlignmentBatch { items })
}

pub fn critic_prompt(query: &str, agent_response: &str, ground_truth: &str) -> String {
    render(
        CRITIC_TEMPLATE,
        &[("question", query), ("ground_truth", ground_truth), ("response", agent_response)],
    )
}

pub fn update_prompt(persona_text: &str, gradients: &[TextualGradient]) -> String {
    let feedback = gradients.iter().map(|g| g.feedback.as_str()).collect::<Vec<_>>().join(FEEDBACK_SEPARATOR);
    render(UPDATE_TEMPLATE, &[("persona", persona_text), ("feedback", &feedback)])
}

fn non_empty_reply(reply: String) -> Result<String, AlignmentError> {
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        Err(AlignmentError::EmptyCompletion)
    } else {
        Ok(trimmed.to_string())
    }
}

/// One critic call producing the feedback for a single batch item.
pub fn compute_gradient(
    query: &str,
    agent_response: &str,
    ground_truth: &str,
    item_index: usize,
    llm: &dyn ChatBackend,
    params: &CompletionParams,
) -> Result<TextualGradient, AlignmentError> {
    for (name, value) in [("query", query), ("agent response", agent_response), ("ground truth", ground_truth)] {
        if value.trim().is_empty() {
            return Err(AlignmentError::EmptyInput(name));
        }
    }
    let reply = llm.complete(&[ChatMessage::user(critic_prompt(query, agent_response, ground_truth))], params)?;
    Ok(TextualGradient { feedback: non_empty_reply(reply)?, item_index })
}

/// One update call; on success the returned persona is one version ahead.
pub fn update_persona(
    persona: &Persona,
    gradients: &[TextualGradient],
    llm: &dyn ChatBackend,
    params: &CompletionParams,
) -> Result<Persona, AlignmentError> {
    if gradients.is_empty() {
        return Err(AlignmentError::NoGradients);
    }
    let reply = llm.complete(&[ChatMessage::user(update_prompt(&persona.text, gradients))], params)?;
    let text = non_empty_reply(reply)?;
    let mut next = persona.clone();
    next.replace_text(text);
    Ok(next)
}

/// One optimizer call as sent and answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub persona_version: usize,
    pub batch: AlignmentBatch,
    pub gradients: Vec<TextualGradient>,
    /// Persona text after the update; `None` when the iteration failed.
    pub updated_persona: Option<String>,
    /// Critic calls in item order, then the update call.
    #[serde(default)]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub persona: Persona,
    pub iterations: Vec<IterationLog>,
    /// Set when an iteration failed; `persona` is then the last fully
    /// updated one.
    pub warning: Option<String>,
}

impl AlignmentOutcome {
    pub fn completed_iterations(&self) -> usize {
        self.iterations.iter().filter(|i| i.updated_persona.is_some()).count()
    }
}

/// Backend and sampling parameters for critic and update calls.
#[derive(Clone, Copy)]
pub struct Optimizer<'a> {
    pub llm: &'a dyn ChatBackend,
    pub params: &'a CompletionParams,
}

fn run_iteration(
    policy: &dyn Responder,
    opt: Optimizer<'_>,
    buffer: &EpisodicBuffer,
    persona: &Persona,
    config: &AlignmentConfig,
    log: &mut IterationLog,
) -> Result<Persona, AlignmentError> {
    let indices = build_batch(buffer, config.batch_size)?;
    log.batch = simulate_responses(policy, buffer, &indices, persona, config.allow_self_retrieval)?;
    for (i, item) in log.batch.items.iter().enumerate() {
        let response = if item.agent_response.trim().is_empty() { NO_RESPONSE } else { &item.agent_response };
        let g = compute_gradient(&item.query, response, &item.ground_truth, i, opt.llm, opt.params)?;
        log.exchanges.push(Exchange { prompt: critic_prompt(&item.query, response, &item.ground_truth), reply: g.feedback.clone() });
        log.gradients.push(g);
    }
    let next = update_persona(persona, &log.gradients, opt.llm, opt.params)?;
    log.exchanges.push(Exchange { prompt: update_prompt(&persona.text, &log.gradients), reply: next.text.clone() });
    Ok(next)
}

/// Aligns `init` to the user over `config.iterations` rounds, simulating
/// with the agent loop of `env` and optimizing with its backend.
///
/// Invalid configs and empty buffers are errors. A failure inside an
/// iteration ends the loop; the outcome then carries the last successfully
/// updated persona and a warning.
pub fn align(
    env: &AgentEnv<'_>,
    buffer: &EpisodicBuffer,
    init: &Persona,
    config: &AlignmentConfig,
) -> Result<AlignmentOutcome, AlignmentError> {
    align_with(env, Optimizer { llm: env.llm, params: env.params }, buffer, init, config)
}

/// [`align`] with an arbitrary simulation policy.
pub fn align_with(
    policy: &dyn Responder,
    opt: Optimizer<'_>,
    buffer: &EpisodicBuffer,
    init: &Persona,
    config: &AlignmentConfig,
) -> Result<AlignmentOutcome, AlignmentError> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(AlignmentError::EmptyBuffer(buffer.user().clone()));
    }
    let mut persona = init.clone();
    let mut iterations = Vec::with_capacity(config.iterations);
    let mut warning = None;
    for iteration in 0..config.iterations {
        let mut log = IterationLog {
            iteration,
            persona_version: persona.version,
            batch: AlignmentBatch::default(),
            gradients: Vec::new(),
            updated_persona: None,
            exchanges: Vec::new(),
            error: None,
        };
        match run_iteration(policy, opt, buffer, &persona, config, &mut log) {
            Ok(next) => {
                log.updated_persona = Some(next.text.clone());
                persona = next;
                iterations.push(log);
            }
            Err(e) => {
                tracing::warn!(user = %buffer.user(), iteration, error = %e, "alignment iteration failed");
                warning = Some(format!("iteration {iteration} failed: {e}"));
                log.error = Some(e.to_string());
                iterations.push(log);
                break;
            }
        }
    }
    Ok(AlignmentOutcome { persona, iterations, warning })
}

/// Writes one JSON line per iteration to `path`.
pub fn write_alignment_log(path: &Path, outcome: &AlignmentOutcome) -> Result<(), AlignmentError> {
    let log_err = |m: String| AlignmentError::Log { path: path.to_path_buf(), message: m };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| log_err(e.to_string()))?;
    }
    let mut out = Vec::new();
    for it in &outcome.iterations {
        serde_json::to_writer(&mut out, it).map_err(|e| log_err(e.to_string()))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| log_err(e.to_string()))
}
