#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use persona_agent::agent::RunConfig;
use persona_agent::alignment::AlignmentConfig;
use persona_agent::benchmark::{ExperimentPlan, MethodKind, Resources, TaskDefinition, TaskSpec};
use persona_agent::config::CliConfig;
use persona_agent::embedding::Encoder;
use persona_agent::llm::{ChatBackend, CompletionParams, ScriptedBackend, ScriptedFixture};
use persona_agent::memory::SummarizationPrompt;
use persona_agent::model::{InteractionRecord, Metadata, TaskKind};
use persona_agent::tools::OfflineKnowledge;

pub const CRITIC_ANCHOR: &str = "meticulous and critical evaluator";
pub const UPDATE_ANCHOR: &str = "prompt engineering assistant tasked with refining";
pub const SUMMARY_ANCHOR: &str = "long-term profile of a user";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_config() -> CliConfig {
    CliConfig::load(&fixture_dir().join("scripted.toml")).expect("fixture config")
}

pub fn fixture_backend() -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::from_file(&fixture_dir().join("scripted.json")).expect("fixture rules"))
}

/// Plan and resources for the bundled movie benchmark with a fresh backend.
pub fn fixture_run(run_dir: &Path, edit: impl FnOnce(&mut CliConfig)) -> (ExperimentPlan, Resources, Arc<ScriptedBackend>) {
    let mut cfg = fixture_config();
    cfg.run_dir = run_dir.to_path_buf();
    edit(&mut cfg);
    let plan = cfg.plan().expect("plan");
    let mut res = cfg.resources().expect("resources");
    let backend = fixture_backend();
    res.llm = backend.clone() as Arc<dyn ChatBackend>;
    (plan, res, backend)
}

pub fn methods(names: &[&str]) -> Vec<MethodKind> {
    names.iter().map(|n| n.parse().expect("method name")).collect()
}

/// Labels of the synthetic world: user `wI` always answers `WORLD_LABELS[I]`.
pub const WORLD_LABELS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
pub const DECOY: &str = "omega";

pub fn world_labels() -> Vec<String> {
    WORLD_LABELS.iter().chain([&DECOY]).map(|s| s.to_string()).collect()
}

pub fn world_query(user: usize, item: usize) -> String {
    format!("Which tag does user w{user} give to item number {item}?")
}

pub fn world_records(user: usize, n: usize) -> Vec<InteractionRecord> {
    (0..n)
        .map(|i| InteractionRecord::new(world_query(user, i), WORLD_LABELS[user], Metadata::at(100 + i as u64)).unwrap())
        .collect()
}

/// A world where the agent answers a user's label only once the persona
/// carries that user's keyword, and the keyword only arrives through the
/// critic feedback and the persona update.
pub fn world_fixture() -> ScriptedFixture {
    let mut fx = ScriptedFixture::default();
    for l in WORLD_LABELS {
        fx = fx.regex(
            format!("(?s){CRITIC_ANCHOR}.*Expected Answer: {l}\n"),
            format!("The persona must mention pref-{l}: this user consistently picks {l}."),
        );
    }
    for l in WORLD_LABELS {
        fx = fx.regex(
            format!("(?s){UPDATE_ANCHOR}.*pref-{l}"),
            format!("You are a personalized assistant. Keyword pref-{l}. Search user_memory first, then wikipedia."),
        );
    }
    fx = fx.contains(SUMMARY_ANCHOR, "Answers questions about items.");
    for l in WORLD_LABELS {
        fx = fx.regex(format!("(?s)pref-{l}.*Observation: .*Observation: "), format!("Thought: known.\nFinal Answer: {l}"));
    }
    fx.regex("(?s)Observation: .*Observation: ", format!("Thought: guess.\nFinal Answer: {DECOY}"))
        .contains("Observation: ", "Thought: background.\nAction: wikipedia\nAction Input: Items")
        .contains("Action: <tool name", "Thought: history.\nAction: user_memory\nAction Input: item tags")
        .with_default(DECOY)
}

pub fn world_backend() -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(world_fixture()).expect("world rules"))
}

pub fn world_knowledge() -> OfflineKnowledge {
    OfflineKnowledge::new([("Items".to_string(), "Generic catalogue items.".to_string())])
}

/// Writes the synthetic world dataset (`profile` + `tests` records per user)
/// and returns a plan over it.
pub fn world_plan(dir: &Path, profile: usize, tests: usize, methods: Vec<MethodKind>) -> ExperimentPlan {
    let data = dir.join("world.jsonl");
    let mut lines = String::new();
    for u in 0..WORLD_LABELS.len() {
        let recs: Vec<_> = world_records(u, profile + tests)
            .into_iter()
            .map(|r| serde_json::json!({"query": r.query, "ground_truth": r.ground_truth, "timestamp": r.timestamp()}))
            .collect();
        let line = serde_json::json!({"user_id": format!("w{u}"), "records": recs, "split_index": profile});
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    std::fs::write(&data, lines).unwrap();
    ExperimentPlan {
        run_dir: dir.join("run"),
        store_root: None,
        tasks: vec![TaskSpec {
            definition: TaskDefinition { task: TaskKind::MovieTagging, labels: world_labels() },
            data,
        }],
        methods,
        top_users: 10,
        seed: 1,
        run: RunConfig::default(),
        alignment: AlignmentConfig::default(),
        summary: SummarizationPrompt::default(),
        params: CompletionParams::default(),
    }
}

pub fn world_resources(backend: Arc<ScriptedBackend>) -> Resources {
    Resources { llm: backend, knowledge: Arc::new(world_knowledge()), encoder: Encoder::default() }
}
