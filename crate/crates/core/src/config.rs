//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory of the config file.
//!
//! ```toml
//! run_dir = "out"
//! seed = 7
//! top_users = 100
//! methods = ["rag-4", "persona_agent"]
//!
//! [backend]
//! kind = "scripted"          # or "http"
//! fixture = "scripted.json"
//!
//! [knowledge]
//! kind = "offline"           # "offline", "wikipedia" or "none"
//! path = "knowledge.json"
//!
//! [[tasks]]
//! definition = "movies.task.json"
//! data = "movies.jsonl"
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::RunConfig;
use crate::alignment::AlignmentConfig;
use crate::benchmark::{ExperimentPlan, MethodKind, Resources, TaskDefinition, TaskSpec};
use crate::embedding::Encoder;
use crate::llm::{ChatBackend, CompletionParams, HttpBackend, HttpConfig, ScriptedBackend, WireFormat, ENV_API_KEY};
use crate::memory::SummarizationPrompt;
use crate::model::TaskKind;
use crate::tools::{KnowledgeProvider, OfflineKnowledge, WikipediaKnowledge, DEFAULT_WIKIPEDIA_BASE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSettings {
    Scripted {
        fixture: PathBuf,
    },
    Http {
        api_base: String,
        model: String,
        /// Environment variable holding the API key.
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default)]
        wire: WireFormat,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

fn default_key_env() -> String {
    ENV_API_KEY.to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KnowledgeSettings {
    Offline { path: PathBuf },
    Wikipedia {
        #[serde(default = "default_wiki")]
        base_url: String,
    },
    #[default]
    None,
}

fn default_wiki() -> String {
    DEFAULT_WIKIPEDIA_BASE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSettings {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    CompletionParams::default().temperature
}

fn default_max_tokens() -> u32 {
    CompletionParams::default().max_tokens
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self { temperature: default_temperature(), max_tokens: default_max_tokens() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySettings {
    pub template: Option<String>,
    pub budget_chars: Option<usize>,
    pub max_recent_records: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSettings {
    /// Task definition file; alternatively give `task` (and `labels`) inline.
    pub definition: Option<PathBuf>,
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub labels: Vec<String>,
    pub data: PathBuf,
}

fn default_top_users() -> usize {
    100
}

fn default_methods() -> Vec<MethodKind> {
    vec![MethodKind::PersonaAgent(Default::default())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub run_dir: PathBuf,
    pub store_root: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_top_users")]
    pub top_users: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodKind>,
    pub backend: BackendSettings,
    #[serde(default)]
    pub sampling: SamplingSettings,
    #[serde(default)]
    pub knowledge: KnowledgeSettings,
    #[serde(default)]
    pub embedding: Encoder,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub agent: RunConfig,
    #[serde(default)]
    pub summary: SummarySettings,
    pub tasks: Vec<TaskSettings>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl CliConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: CliConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.run_dir = resolve(&base, &cfg.run_dir);
        cfg.store_root = cfg.store_root.map(|p| resolve(&base, &p));
        if let BackendSettings::Scripted { fixture } = &mut cfg.backend {
            *fixture = resolve(&base, fixture);
        }
        if let KnowledgeSettings::Offline { path } = &mut cfg.knowledge {
            *path = resolve(&base, path);
        }
        for t in &mut cfg.tasks {
            t.data = resolve(&base, &t.data);
            t.definition = t.definition.as_ref().map(|d| resolve(&base, d));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text, path)
    }

    pub fn completion_params(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.sampling.temperature,
            max_tokens: self.sampling.max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    pub fn summary_prompt(&self) -> Result<SummarizationPrompt, ConfigError> {
        let mut p = match &self.summary.template {
            Some(t) => SummarizationPrompt::new(t.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => SummarizationPrompt::default(),
        };
        if let Some(b) = self.summary.budget_chars {
            p.budget_chars = b;
        }
        if let Some(m) = self.summary.max_recent_records {
            p.max_recent_records = m.max(1);
        }
        Ok(p)
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        self.tasks
            .iter()
            .map(|t| {
                let definition = match (&t.definition, t.task) {
                    (Some(path), None) if t.labels.is_empty() => {
                        TaskDefinition::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?
                    }
                    (None, Some(task)) => TaskDefinition { task, labels: t.labels.clone() }
                        .normalized()
                        .map_err(ConfigError::Invalid)?,
                    _ => {
                        return Err(ConfigError::Invalid(
                            "each task needs either `definition` or `task` (with optional `labels`)".into(),
                        ))
                    }
                };
                Ok(TaskSpec { definition, data: t.data.clone() })
            })
            .collect()
    }

    pub fn plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let plan = ExperimentPlan {
            run_dir: self.run_dir.clone(),
            store_root: self.store_root.clone(),
            tasks: self.task_specs()?,
            methods: self.methods.clone(),
            top_users: self.top_users,
            seed: self.seed,
            run: self.agent,
            alignment: self.alignment,
            summary: self.summary_prompt()?,
            params: self.completion_params(),
        };
        plan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(plan)
    }

    pub fn resources(&self) -> Result<Resources, ConfigError> {
        let llm: Arc<dyn ChatBackend> = match &self.backend {
            BackendSettings::Scripted { fixture } => Arc::new(
                ScriptedBackend::from_file(fixture)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", fixture.display())))?,
            ),
            BackendSettings::Http { api_base, model, api_key_env, wire, timeout_secs } => {
                let mut cfg = HttpConfig::new(api_base.clone(), model.clone());
                cfg.api_key = std::env::var(api_key_env).ok();
                cfg.wire = *wire;
                if let Some(t) = timeout_secs {
                    cfg.timeout_secs = *t;
                }
                Arc::new(HttpBackend::new(cfg))
            }
        };
        let knowledge: Arc<dyn KnowledgeProvider> = match &self.knowledge {
            KnowledgeSettings::Offline { path } => Arc::new(OfflineKnowledge::load(path).map_err(ConfigError::Invalid)?),
            KnowledgeSettings::Wikipedia { base_url } => Arc::new(WikipediaKnowledge::new(base_url.clone())),
            KnowledgeSettings::None => Arc::new(OfflineKnowledge::default()),
        };
        Ok(Resources { llm, knowledge, encoder: self.embedding.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
run_dir = "out"
[backend]
kind = "scripted"
fixture = "fx.json"
[[tasks]]
task = "movie_tagging"
labels = ["comedy", "drama"]
data = "movies.jsonl"
"#;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cfg = CliConfig::parse(MINIMAL, Path::new("/cfg/bench.toml")).unwrap();
        assert_eq!(cfg.alignment.batch_size, 3);
        assert_eq!(cfg.alignment.iterations, 1);
        assert_eq!(cfg.agent.k_memory, 4);
        assert_eq!(cfg.sampling.temperature, 0.1);
        assert_eq!(cfg.top_users, 100);
        assert_eq!(cfg.run_dir, Path::new("/cfg/out"));
        assert_eq!(cfg.tasks[0].data, Path::new("/cfg/movies.jsonl"));
        assert_eq!(cfg.backend, BackendSettings::Scripted { fixture: "/cfg/fx.json".into() });
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.tasks[0].definition.labels, ["comedy", "drama"]);
    }

    #[test]
    fn overrides_and_errors() {
        let text = format!("{MINIMAL}\n[alignment]\niterations = 0\n");
        let cfg = CliConfig::parse(&text, Path::new("c.toml")).unwrap();
        assert!(cfg.plan().is_err());
        assert!(CliConfig::parse("run_dir = 1", Path::new("c.toml")).is_err());
        let text = MINIMAL.replace("run_dir = \"out\"", "run_dir = \"out\"\nbogus = 1");
        assert!(CliConfig::parse(&text, Path::new("c.toml")).is_err());
        let text = MINIMAL.replace("methods", "x") + "\nmethods = [\"rag-0\"]\n";
        assert!(CliConfig::parse(&text, Path::new("c.toml")).is_err());
    }

    #[test]
    fn embedding_and_http_sections() {
        let text = r#"
run_dir = "out"
tasks = []
[backend]
kind = "http"
api_base = "http://localhost:8000/v1"
model = "m"
wire = "anthropic"
[embedding]
kind = "hashed_tf_idf"
dim = 64
seed = 3
"#;
        let cfg = CliConfig::parse(text, Path::new("c.toml")).unwrap();
        assert_eq!(cfg.embedding, Encoder::hashed(64, 3));
        assert!(matches!(cfg.backend, BackendSettings::Http { wire: WireFormat::Anthropic, .. }));
        assert!(cfg.resources().is_ok());
    }
}
