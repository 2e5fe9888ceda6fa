//! Evaluated methods: single-completion baselines, tool-using agents and the
//! persona agent with its ablations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::UserDataset;
use crate::agent::{init_persona_from_summary, prompts, run_episode, write_trajectory, AgentEnv, Persona, RunConfig};
use crate::alignment::{align_with, write_alignment_log, AlignmentConfig, AlignmentError, Optimizer, Responder, SimulatedResponse};
use crate::embedding::Encoder;
use crate::llm::{ChatBackend, ChatMessage, CompletionParams};
use crate::memory::{summarize_profile, EpisodicBuffer, SemanticProfile, SummarizationPrompt, UserStore};
use crate::model::{InteractionRecord, Prediction, TaskKind, UserId};
use crate::text::render;
use crate::tools::{render_memories, KnowledgeProvider, ToolRegistry};

/// Records per chunk when rebuilding the long-term note of the memory-bank
/// baseline.
pub const MEMBANK_CHUNK: usize = 20;

pub const MEMBANK_NOTE_TEMPLATE: &str = "\
You maintain a long-term memory note about a user of a {task} assistant.

Current note:
{note}

New interactions:
{history}

Rewrite the note so it captures everything useful about the user's preferences. Reply with the note only.";

/// Which parts of the persona agent are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub alignment: bool,
    pub persona: bool,
    pub memory: bool,
    pub action: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { alignment: true, persona: true, memory: true, action: true }
    }
}

impl AblationFlags {
    pub const FULL: Self = Self { alignment: true, persona: true, memory: true, action: true };

    /// The full model followed by one variant per disabled component.
    pub fn table() -> [Self; 5] {
        [
            Self::FULL,
            Self { alignment: false, ..Self::FULL },
            Self { persona: false, ..Self::FULL },
            Self { memory: false, ..Self::FULL },
            Self { action: false, ..Self::FULL },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    DirectPrompt,
    Icl(usize),
    Rag(usize),
    Pag(usize),
    ReActAgent,
    MemoryBankAgent,
    PersonaAgent(AblationFlags),
}

impl MethodKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            MethodKind::Icl(0) | MethodKind::Rag(0) | MethodKind::Pag(0) => Err(format!("{self}: k must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn uses_agent_loop(&self) -> bool {
        match self {
            MethodKind::ReActAgent | MethodKind::MemoryBankAgent => true,
            MethodKind::PersonaAgent(f) => f.action,
            _ => false,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::DirectPrompt => f.write_str("direct"),
            MethodKind::Icl(k) => write!(f, "icl-{k}"),
            MethodKind::Rag(k) => write!(f, "rag-{k}"),
            MethodKind::Pag(k) => write!(f, "pag-{k}"),
            MethodKind::ReActAgent => f.write_str("react"),
            MethodKind::MemoryBankAgent => f.write_str("membank-like"),
            MethodKind::PersonaAgent(flags) => {
                f.write_str("persona_agent")?;
                for (on, name) in [
                    (flags.alignment, "alignment"),
                    (flags.persona, "persona"),
                    (flags.memory, "memory"),
                    (flags.action, "action"),
                ] {
                    if !on {
                        write!(f, "-wo_{name}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let with_k = |prefix: &str, default: usize| -> Option<Result<usize, String>> {
            let rest = lower.strip_prefix(prefix)?;
            if rest.is_empty() {
                return Some(Ok(default));
            }
            let k = rest.strip_prefix('-')?;
            Some(k.parse::<usize>().map_err(|_| format!("bad k in method `{s}`")))
        };
        let method = match lower.as_str() {
            "direct" | "direct_prompt" => MethodKind::DirectPrompt,
            "react" => MethodKind::ReActAgent,
            "membank" | "membank-like" | "memory_bank" => MethodKind::MemoryBankAgent,
            _ => {
                if let Some(k) = with_k("icl", 4) {
                    MethodKind::Icl(k?)
                } else if let Some(k) = with_k("rag", 4) {
                    MethodKind::Rag(k?)
                } else if let Some(k) = with_k("pag", 4) {
                    MethodKind::Pag(k?)
                } else if let Some(rest) = lower.strip_prefix("persona_agent") {
                    let mut flags = AblationFlags::FULL;
                    for part in rest.split("-wo_").skip(1) {
                        match part {
                            "alignment" => flags.alignment = false,
                            "persona" => flags.persona = false,
                            "memory" => flags.memory = false,
                            "action" => flags.action = false,
                            other => return Err(format!("unknown ablation `{other}` in `{s}`")),
                        }
                    }
                    if !rest.is_empty() && !rest.starts_with("-wo_") {
                        return Err(format!("unknown method `{s}`"));
                    }
                    MethodKind::PersonaAgent(flags)
                } else {
                    return Err(format!("unknown method `{s}`"));
                }
            }
        };
        method.validate()?;
        Ok(method)
    }
}

impl Serialize for MethodKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Instruction appended to every evaluated question.
pub fn answer_instruction(task: TaskKind, labels: &[String]) -> String {
    if task.is_rating() {
        "Answer with a single integer rating from 1 to 5 and nothing else.".to_string()
    } else {
        format!("Answer with exactly one of these labels and nothing else: [{}].", labels.join(", "))
    }
}

/// The question text as posed to a model.
pub fn pose(query: &str, instruction: &str) -> String {
    format!("{query}\n\n{instruction}")
}

/// Single-completion prompt: optional context sections, then the question.
pub fn completion_prompt(sections: &[(&str, String)], question: &str) -> String {
    let mut out = String::new();
    for (title, body) in sections {
        out.push_str(title);
        out.push_str(":\n");
        out.push_str(body);
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(question);
    out.push_str("\nAnswer:");
    out
}

/// Everything a method needs besides the user's data.
#[derive(Clone, Copy)]
pub struct MethodContext<'a> {
    pub llm: &'a dyn ChatBackend,
    pub knowledge: &'a dyn KnowledgeProvider,
    pub encoder: &'a Encoder,
    pub params: &'a CompletionParams,
    pub run: RunConfig,
    pub alignment: AlignmentConfig,
    pub summary: &'a SummarizationPrompt,
    pub seed: u64,
    /// Profile records of every user of the task, for ICL demonstrations.
    pub icl_pool: &'a [(UserId, InteractionRecord)],
    /// Per-method directory for trajectory and alignment logs.
    pub log_dir: Option<&'a Path>,
    pub store: Option<&'a UserStore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub user: UserId,
    pub predictions: Vec<Prediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persona: Option<Persona>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Answers a question with the agent loop, appending the answer format.
struct TaskAgent<'a> {
    env: AgentEnv<'a>,
    instruction: String,
}

impl Responder for TaskAgent<'_> {
    fn respond(
        &self,
        persona: &Persona,
        query: &str,
        buffer: &EpisodicBuffer,
        masked: &[usize],
    ) -> Result<SimulatedResponse, AlignmentError> {
        let trajectory = run_episode(&self.env, persona, &pose(query, &self.instruction), buffer, masked)?;
        Ok(SimulatedResponse { answer: trajectory.final_answer().to_string(), trajectory: Some(trajectory) })
    }
}

/// One completion under the persona with retrieved history inlined.
struct DirectResponder<'a> {
    llm: &'a dyn ChatBackend,
    params: &'a CompletionParams,
    encoder: &'a Encoder,
    k: usize,
    memory: bool,
    instruction: String,
}

impl Responder for DirectResponder<'_> {
    fn respond(
        &self,
        persona: &Persona,
        query: &str,
        buffer: &EpisodicBuffer,
        masked: &[usize],
    ) -> Result<SimulatedResponse, AlignmentError> {
        let mut sections = Vec::new();
        if self.memory {
            if let Some(history) = retrieved_history(buffer, query, self.k, self.encoder, masked)? {
                sections.push(("Relevant past interactions of this user", history));
            }
        }
        let prompt = completion_prompt(&sections, &pose(query, &self.instruction));
        let reply = self
            .llm
            .complete(&[ChatMessage::system(persona.text.clone()), ChatMessage::user(prompt)], self.params)?;
        Ok(SimulatedResponse { answer: reply.trim().to_string(), trajectory: None })
    }
}

fn retrieved_history(
    buffer: &EpisodicBuffer,
    query: &str,
    k: usize,
    encoder: &Encoder,
    masked: &[usize],
) -> Result<Option<String>, crate::memory::MemoryError> {
    if buffer.is_empty() {
        return Ok(None);
    }
    let idx = buffer.retrieve_indices(query, k, encoder, masked)?;
    if idx.is_empty() {
        return Ok(None);
    }
    Ok(Some(render_memories(idx.iter().map(|&i| &buffer.records()[i]))))
}

fn user_seed(seed: u64, user: &UserId, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in user.as_str().bytes().chain((index as u64).to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn icl_demos(ctx: &MethodContext<'_>, user: &UserId, index: usize, k: usize) -> Option<String> {
    let others: Vec<&InteractionRecord> = ctx.icl_pool.iter().filter(|(u, _)| u != user).map(|(_, r)| r).collect();
    if others.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(ctx.seed, user, index));
    let mut picked = sample(&mut rng, others.len(), k.min(others.len())).into_vec();
    picked.sort_unstable();
    Some(
        picked
            .iter()
            .map(|&i| format!("Example question: {}\nExample answer: {}", others[i].query, others[i].ground_truth))
            .collect::<Vec<_>>()
            .join("\n\n"),
    )
}

fn summarize(ctx: &MethodContext<'_>, buffer: &EpisodicBuffer, task: TaskKind, warnings: &mut Vec<String>) -> Option<SemanticProfile> {
    match summarize_profile(buffer, task, ctx.summary, ctx.llm, ctx.params) {
        Ok(p) => {
            if let Some(store) = ctx.store {
                if let Err(e) = store.save_profile(&p) {
                    warnings.push(format!("saving profile: {e}"));
                }
            }
            Some(p)
        }
        Err(e) => {
            warnings.push(format!("profile summarization failed: {e}"));
            None
        }
    }
}

fn membank_note(ctx: &MethodContext<'_>, buffer: &EpisodicBuffer, task: TaskKind, warnings: &mut Vec<String>) -> String {
    let mut note = String::from("(empty)");
    for chunk in buffer.records().chunks(MEMBANK_CHUNK) {
        let history = chunk
            .iter()
            .map(|r| format!("Q: {}\nA: {}", r.query, r.ground_truth))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = render(
            MEMBANK_NOTE_TEMPLATE,
            &[("task", task.display_name()), ("note", &note), ("history", &history)],
        );
        match ctx.llm.complete(&[ChatMessage::user(prompt)], ctx.params) {
            Ok(reply) if !reply.trim().is_empty() => note = reply.trim().to_string(),
            Ok(_) => warnings.push("memory note update returned nothing".into()),
            Err(e) => warnings.push(format!("memory note update failed: {e}")),
        }
    }
    note
}

fn log_trajectory(ctx: &MethodContext<'_>, user: &UserId, index: usize, t: &crate::agent::Trajectory, warnings: &mut Vec<String>) {
    if let Some(dir) = ctx.log_dir {
        if let Err(e) = write_trajectory(dir, user, index, t) {
            warnings.push(e.to_string());
        }
    }
}

/// Produces one prediction per test record of `data`.
///
/// Failures of individual queries become parse-failure predictions; setup
/// failures (profile, alignment) degrade the method and are reported as
/// warnings.
pub fn run_method(method: MethodKind, data: &UserDataset, ctx: &MethodContext<'_>) -> MethodOutput {
    let user = &data.user;
    let task = data.task;
    let instruction = answer_instruction(task, &data.label_set);
    let mut warnings = Vec::new();
    let mut out_persona = None;

    let buffer = match EpisodicBuffer::from_records(user.clone(), data.profile_records.clone(), ctx.encoder) {
        Ok(b) => b,
        Err(e) => {
            let msg = format!("building memory failed: {e}");
            return MethodOutput {
                user: user.clone(),
                predictions: data.test_records.iter().map(|_| Prediction::failed(msg.clone())).collect(),
                persona: None,
                warnings: vec![msg],
            };
        }
    };
    if let Some(store) = ctx.store {
        if let Err(e) = store.save_buffer(&buffer) {
            warnings.push(format!("saving buffer: {e}"));
        }
    }

    let single = |system: Option<&str>, sections: Vec<(&str, String)>, query: &str| -> Result<String, String> {
        let mut msgs = Vec::new();
        if let Some(s) = system {
            msgs.push(ChatMessage::system(s));
        }
        msgs.push(ChatMessage::user(completion_prompt(&sections, &pose(query, &instruction))));
        ctx.llm.complete(&msgs, ctx.params).map_err(|e| e.to_string())
    };
    let history = |query: &str, k: usize| -> Result<Vec<(&'static str, String)>, String> {
        Ok(retrieved_history(&buffer, query, k, ctx.encoder, &[])
            .map_err(|e| e.to_string())?
            .map(|h| ("Relevant past interactions of this user", h))
            .into_iter()
            .collect())
    };

    let answers: Vec<Result<String, String>> = match method {
        MethodKind::DirectPrompt => data.test_records.iter().map(|r| single(None, vec![], &r.query)).collect(),
        MethodKind::Icl(k) => data
            .test_records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sections = icl_demos(ctx, user, i, k).map(|d| ("Examples", d)).into_iter().collect();
                single(None, sections, &r.query)
            })
            .collect(),
        MethodKind::Rag(k) => data
            .test_records
            .iter()
            .map(|r| single(None, history(&r.query, k)?, &r.query))
            .collect(),
        MethodKind::Pag(k) => {
            let profile = summarize(ctx, &buffer, task, &mut warnings);
            data.test_records
                .iter()
                .map(|r| {
                    let mut sections = Vec::new();
                    if let Some(p) = &profile {
                        sections.push(("User profile", p.text.clone()));
                    }
                    sections.extend(history(&r.query, k)?);
                    single(None, sections, &r.query)
                })
                .collect()
        }
        MethodKind::ReActAgent | MethodKind::MemoryBankAgent => {
            let system = if method == MethodKind::MemoryBankAgent {
                let note = membank_note(ctx, &buffer, task, &mut warnings);
                format!("{}\n\nLong-term memory about this user:\n{note}", prompts::REACT_SYSTEM_PROMPT)
            } else {
                prompts::REACT_SYSTEM_PROMPT.to_string()
            };
            let persona = Persona::new(user.clone(), system);
            let registry = ToolRegistry::standard();
            let agent = TaskAgent {
                env: AgentEnv {
                    llm: ctx.llm,
                    knowledge: ctx.knowledge,
                    encoder: ctx.encoder,
                    registry: &registry,
                    params: ctx.params,
                    config: ctx.run.unconstrained(),
                },
                instruction: instruction.clone(),
            };
            let answers = evaluate(&agent, &persona, &buffer, data, ctx, &mut warnings);
            out_persona = Some(persona);
            answers
        }
        MethodKind::PersonaAgent(flags) => {
            let persona = if !flags.persona {
                Persona::new(user.clone(), prompts::GENERIC_PERSONA)
            } else if flags.memory {
                let summary = summarize(ctx, &buffer, task, &mut warnings).map(|p| p.text).unwrap_or_default();
                init_persona_from_summary(user.clone(), &summary)
            } else {
                init_persona_from_summary(user.clone(), "")
            };
            let registry = if flags.memory { ToolRegistry::standard() } else { ToolRegistry::knowledge_only() };
            let agent = TaskAgent {
                env: AgentEnv {
                    llm: ctx.llm,
                    knowledge: ctx.knowledge,
                    encoder: ctx.encoder,
                    registry: &registry,
                    params: ctx.params,
                    config: ctx.run,
                },
                instruction: instruction.clone(),
            };
            let direct = DirectResponder {
                llm: ctx.llm,
                params: ctx.params,
                encoder: ctx.encoder,
                k: ctx.run.k_memory,
                memory: flags.memory,
                instruction: instruction.clone(),
            };
            let policy: &dyn Responder = if flags.action { &agent } else { &direct };

            let persona = if flags.alignment && flags.persona {
                let opt = Optimizer { llm: ctx.llm, params: ctx.params };
                match align_with(policy, opt, &buffer, &persona, &ctx.alignment) {
                    Ok(outcome) => {
                        if let Some(dir) = ctx.log_dir {
                            let path = dir.join(user.as_str()).join("align.log.jsonl");
                            if let Err(e) = write_alignment_log(&path, &outcome) {
                                warnings.push(e.to_string());
                            }
                        }
                        if let Some(w) = &outcome.warning {
                            warnings.push(format!("alignment: {w}"));
                        }
                        outcome.persona
                    }
                    Err(e) => {
                        warnings.push(format!("alignment skipped: {e}"));
                        persona
                    }
                }
            } else {
                persona
            };
            if let Some(store) = ctx.store {
                if let Err(e) = store.save_persona(&persona) {
                    warnings.push(format!("saving persona: {e}"));
                }
            }
            let answers = evaluate(policy, &persona, &buffer, data, ctx, &mut warnings);
            out_persona = Some(persona);
            answers
        }
    };

    let predictions = answers
        .into_iter()
        .map(|a| match a {
            Ok(text) => Prediction::from_raw(text, task, &data.label_set),
            Err(e) => Prediction::failed(format!("error: {e}")),
        })
        .collect();
    MethodOutput { user: user.clone(), predictions, persona: out_persona, warnings }
}

fn evaluate(
    policy: &dyn Responder,
    persona: &Persona,
    buffer: &EpisodicBuffer,
    data: &UserDataset,
    ctx: &MethodContext<'_>,
    warnings: &mut Vec<String>,
) -> Vec<Result<String, String>> {
    data.test_records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let response = policy.respond(persona, &r.query, buffer, &[]).map_err(|e| e.to_string())?;
            if let Some(t) = &response.trajectory {
                log_trajectory(ctx, &data.user, i, t, warnings);
            }
            Ok(response.answer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        let mut all = vec![
            MethodKind::DirectPrompt,
            MethodKind::Icl(4),
            MethodKind::Rag(1),
            MethodKind::Rag(4),
            MethodKind::Pag(4),
            MethodKind::ReActAgent,
            MethodKind::MemoryBankAgent,
        ];
        all.extend(AblationFlags::table().map(MethodKind::PersonaAgent));
        all.push(MethodKind::PersonaAgent(AblationFlags { alignment: false, memory: false, ..AblationFlags::FULL }));
        for m in all {
            assert_eq!(m.to_string().parse::<MethodKind>().unwrap(), m, "{m}");
        }
        assert_eq!("rag".parse::<MethodKind>().unwrap(), MethodKind::Rag(4));
        assert!("rag-0".parse::<MethodKind>().is_err());
        assert!("persona_agent-wo_tools".parse::<MethodKind>().is_err());
        assert!("persona_agentx".parse::<MethodKind>().is_err());
        assert!("gpt".parse::<MethodKind>().is_err());
    }

    #[test]
    fn ablation_names() {
        let names: Vec<String> = AblationFlags::table().iter().map(|f| MethodKind::PersonaAgent(*f).to_string()).collect();
        assert_eq!(
            names,
            [
                "persona_agent",
                "persona_agent-wo_alignment",
                "persona_agent-wo_persona",
                "persona_agent-wo_memory",
                "persona_agent-wo_action"
            ]
        );
    }

    #[test]
    fn prompt_layout() {
        let p = completion_prompt(&[("User profile", "likes tea".into())], "Which drink?");
        assert_eq!(p, "User profile:\nlikes tea\n\nQuestion: Which drink?\nAnswer:");
        assert!(answer_instruction(TaskKind::MovieTagging, &["a".into(), "b".into()]).contains("[a, b]"));
    }
}
