mod common;

use persona_agent::agent::{
    init_persona_from_summary, read_trajectory, run_episode, write_trajectory, AgentEnv, AgentError, AgentStep, RunConfig,
    Termination,
};
use persona_agent::embedding::Encoder;
use persona_agent::llm::{ChatBackend, CompletionParams, ScriptedBackend, ScriptedFixture};
use persona_agent::memory::EpisodicBuffer;
use persona_agent::model::{InteractionRecord, Metadata, UserId};
use persona_agent::tools::{OfflineKnowledge, ToolRegistry};
use proptest::prelude::*;

struct World {
    knowledge: OfflineKnowledge,
    encoder: Encoder,
    registry: ToolRegistry,
    params: CompletionParams,
}

impl World {
    fn new() -> Self {
        Self {
            knowledge: OfflineKnowledge::load(&common::fixture_dir().join("knowledge.json")).unwrap(),
            encoder: Encoder::default(),
            registry: ToolRegistry::standard(),
            params: CompletionParams::default(),
        }
    }

    fn env<'a>(&'a self, llm: &'a dyn ChatBackend, config: RunConfig) -> AgentEnv<'a> {
        AgentEnv { llm, knowledge: &self.knowledge, encoder: &self.encoder, registry: &self.registry, params: &self.params, config }
    }

    fn buffer(&self, user: &str, items: &[(&str, &str)]) -> EpisodicBuffer {
        let records = items
            .iter()
            .enumerate()
            .map(|(i, (q, a))| InteractionRecord::new(*q, *a, Metadata::at(i as u64)).unwrap())
            .collect();
        EpisodicBuffer::from_records(UserId::new(user).unwrap(), records, &self.encoder).unwrap()
    }
}

fn film_buffer(w: &World) -> EpisodicBuffer {
    w.buffer("u1", &[("Which tag for Laura?", "noir"), ("Which tag for Vertigo?", "classic")])
}

#[test]
fn two_tools_then_answer() {
    let w = World::new();
    let llm = common::fixture_backend();
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "likes noir films");
    let t = run_episode(&w.env(llm.as_ref(), RunConfig::default()), &persona, "Which tag for Casablanca?", &film_buffer(&w), &[]).unwrap();
    assert_eq!(t.termination, Termination::Answered);
    assert_eq!(t.final_answer(), "classic");
    let tools: Vec<&str> = t.tool_calls().map(|c| c.tool_name.as_str()).collect();
    assert_eq!(tools, ["user_memory", "wikipedia"]);
    assert_eq!(t.steps.len(), 5);
    assert!(t.is_well_formed(8));
}

#[test]
fn early_answer_is_enforced_once() {
    let w = World::new();
    let fx = ScriptedFixture::default()
        .regex("(?s)Observation: .*Observation: ", "Final Answer: noir")
        .contains("Observation: ", "Action: wikipedia\nAction Input: Laura")
        .contains("at least two tools", "Action: user_memory\nAction Input: noir")
        .with_default("Final Answer: noir");
    let llm = ScriptedBackend::new(fx).unwrap();
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "likes noir");
    let t = run_episode(&w.env(&llm, RunConfig::default()), &persona, "Which tag for Laura?", &film_buffer(&w), &[]).unwrap();
    assert_eq!(t.termination, Termination::Answered);
    assert_eq!(t.tool_calls().count(), 2);
    assert!(matches!(t.steps[0], AgentStep::Thought { .. }));
    assert_eq!(llm.call_count(), 4);
}

#[test]
fn unstructured_twice_is_a_protocol_error() {
    let w = World::new();
    let llm = ScriptedBackend::constant("I have no idea.");
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "x");
    let err = run_episode(&w.env(&llm, RunConfig::default()), &persona, "q?", &film_buffer(&w), &[]).unwrap_err();
    assert!(matches!(err, AgentError::Protocol { .. }));
    assert_eq!(llm.call_count(), 2);
}

#[test]
fn budget_exhaustion_forces_last_thought() {
    let w = World::new();
    let llm = ScriptedBackend::constant("Thought: keep looking\nAction: wikipedia\nAction Input: Laura");
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "x");
    let config = RunConfig { max_steps: 1, min_tool_calls: 1, ..RunConfig::default() };
    let t = run_episode(&w.env(&llm, config), &persona, "q?", &film_buffer(&w), &[]).unwrap();
    assert!(t.forced());
    assert_eq!(t.termination, Termination::BudgetExhausted);
    assert!(t.steps.len() <= 3);
    assert_eq!(t.final_answer(), "keep looking");
}

#[test]
fn system_message_is_the_persona_on_every_call() {
    let w = World::new();
    let llm = common::fixture_backend();
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "likes noir films");
    run_episode(&w.env(llm.as_ref(), RunConfig::default()), &persona, "Which tag for Laura?", &film_buffer(&w), &[]).unwrap();
    let calls = llm.call_log();
    assert_eq!(calls.len(), 3);
    assert!(calls.iter().all(|c| c.system_message() == Some(persona.text.as_str())));
}

#[test]
fn replay_reproduces_the_trajectory_and_log_round_trips() {
    let w = World::new();
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "likes noir films");
    let run = || {
        let llm = common::fixture_backend();
        run_episode(&w.env(llm.as_ref(), RunConfig::default()), &persona, "Which tag for Laura?", &film_buffer(&w), &[]).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let dir = tempfile::tempdir().unwrap();
    let path = write_trajectory(dir.path(), &persona.user, 3, &first).unwrap();
    assert!(path.ends_with("u1/3.traj.jsonl"));
    assert_eq!(read_trajectory(&path).unwrap(), first);
}

#[test]
fn episodes_never_see_another_users_buffer() {
    let w = World::new();
    let llm = common::fixture_backend();
    let a = w.buffer("a", &[("Which tag for Alien?", "zzsecretalpha")]);
    let b = w.buffer("b", &[("Which tag for Alien?", "zzsecretbeta")]);
    for (user, buf) in [("a", &a), ("b", &b)] {
        let persona = init_persona_from_summary(UserId::new(user).unwrap(), "watches films");
        run_episode(&w.env(llm.as_ref(), RunConfig::default()), &persona, "Which tag for Alien?", buf, &[]).unwrap();
    }
    let calls = llm.call_log();
    assert_eq!(calls.len(), 6);
    for c in &calls[..3] {
        assert!(!c.prompt().contains("zzsecretbeta"));
    }
    for c in &calls[3..] {
        assert!(!c.prompt().contains("zzsecretalpha"));
    }
    assert!(calls[1].prompt().contains("zzsecretalpha"));
    assert!(calls[4].prompt().contains("zzsecretbeta"));
}

#[test]
fn masked_records_are_not_retrieved() {
    let w = World::new();
    let llm = common::fixture_backend();
    let buf = film_buffer(&w);
    let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "x");
    let config = RunConfig { k_memory: 10, ..RunConfig::default() };
    let t = run_episode(&w.env(llm.as_ref(), config), &persona, "Which tag for Laura?", &buf, &[0]).unwrap();
    let memory = t.observations().next().unwrap();
    assert!(!memory.output.contains("Laura"));
    assert!(memory.output.contains("Vertigo"));
}

const MOVES: [&str; 5] = [
    "Thought: a\nAction: user_memory\nAction Input: tags",
    "Thought: b\nAction: wikipedia\nAction Input: Laura",
    "Thought: c\nAction: nonsense\nAction Input: x",
    "Thought: d\nFinal Answer: noir",
    "Thought: just thinking",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever a backend says, an episode either errors on the protocol or
    /// yields a well-formed trajectory, and unforced answers obey the tool
    /// rule.
    #[test]
    fn episodes_are_well_formed(script in proptest::collection::vec(0usize..5, 1..20), max_steps in 1usize..8) {
        let w = World::new();
        let llm = SequenceBackend::new(script.iter().map(|&m| MOVES[m].to_string()).collect());
        let persona = init_persona_from_summary(UserId::new("u1").unwrap(), "x");
        let config = RunConfig { max_steps, min_tool_calls: 2.min(max_steps), ..RunConfig::default() };
        match run_episode(&w.env(&llm, config), &persona, "Which tag?", &film_buffer(&w), &[]) {
            Err(AgentError::Protocol { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok(t) => {
                prop_assert!(t.is_well_formed(max_steps));
                if !t.forced() {
                    let known = t.tool_calls().filter(|c| c.tool_name == "user_memory" || c.tool_name == "wikipedia").count();
                    prop_assert!(known >= config.min_tool_calls);
                    prop_assert!(t.tool_calls().any(|c| c.tool_name == "user_memory"));
                }
            }
        }
    }
}

/// Replies with a fixed sequence, then repeats the last reply.
struct SequenceBackend {
    replies: Vec<String>,
    log: persona_agent::llm::CallLog,
}

impl SequenceBackend {
    fn new(replies: Vec<String>) -> Self {
        Self { replies, log: Default::default() }
    }
}

impl ChatBackend for SequenceBackend {
    fn complete(
        &self,
        messages: &[persona_agent::llm::ChatMessage],
        _params: &CompletionParams,
    ) -> Result<String, persona_agent::llm::BackendError> {
        let i = self.log.len().min(self.replies.len() - 1);
        let out = Ok(self.replies[i].clone());
        self.log.record(messages, &out);
        out
    }

    fn call_log(&self) -> Vec<persona_agent::llm::CallRecord> {
        self.log.snapshot()
    }
}
