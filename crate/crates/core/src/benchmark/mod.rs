//! Evaluation harness: dataset ingestion, methods, metrics and the
//! experiment runner that writes `results.json` and `per_user.jsonl`.

mod dataset;
mod methods;
mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::RunConfig;
use crate::alignment::AlignmentConfig;
use crate::embedding::Encoder;
use crate::llm::{CallRecord, ChatBackend, CompletionParams, Role};
use crate::memory::{SummarizationPrompt, UserStore};
use crate::model::{InteractionRecord, TaskKind, UserId};
use crate::tools::KnowledgeProvider;

pub use dataset::{load_dataset, parse_dataset, select_top_users, DatasetError, TaskDefinition, UserDataset};
pub use methods::{
    answer_instruction, completion_prompt, pose, run_method, AblationFlags, MethodContext, MethodKind, MethodOutput,
    MEMBANK_CHUNK, MEMBANK_NOTE_TEMPLATE,
};
pub use metrics::{compute_metrics, MetricError, MetricReport, IMPUTED_RATING};

pub const RESULTS_FILE: &str = "results.json";
pub const PER_USER_FILE: &str = "per_user.jsonl";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("metrics for {method} on {task}: {source}")]
    Metrics {
        method: String,
        task: String,
        #[source]
        source: MetricError,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

/// One task of an experiment: its definition and data file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub definition: TaskDefinition,
    pub data: PathBuf,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub run_dir: PathBuf,
    /// Defaults to `<run_dir>/store`.
    pub store_root: Option<PathBuf>,
    pub tasks: Vec<TaskSpec>,
    pub methods: Vec<MethodKind>,
    pub top_users: usize,
    pub seed: u64,
    pub run: RunConfig,
    pub alignment: AlignmentConfig,
    pub summary: SummarizationPrompt,
    pub params: CompletionParams,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Config("no tasks configured".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods configured".into()));
        }
        if self.top_users == 0 {
            return Err(BenchError::Config("top_users must be at least 1".into()));
        }
        for m in &self.methods {
            m.validate().map_err(BenchError::Config)?;
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(BenchError::Config(format!("method {m} listed twice")));
            }
        }
        self.run.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.alignment.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn store_root(&self) -> PathBuf {
        self.store_root.clone().unwrap_or_else(|| self.run_dir.join("store"))
    }

    /// Directory holding trajectories and alignment logs of one method.
    pub fn log_dir(&self, task: TaskKind, method: MethodKind) -> PathBuf {
        self.run_dir.join("logs").join(task.slug()).join(method.to_string())
    }

    /// Memory store of one method on one task.
    pub fn method_store(&self, task: TaskKind, method: MethodKind) -> UserStore {
        UserStore::new(self.store_root().join(task.slug()).join(method.to_string()))
    }
}

/// Backend, knowledge source and encoder shared by every method.
#[derive(Clone)]
pub struct Resources {
    pub llm: Arc<dyn ChatBackend>,
    pub knowledge: Arc<dyn KnowledgeProvider>,
    pub encoder: Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: MethodKind,
    pub task: TaskKind,
    pub report: MetricReport,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub method: MethodKind,
    pub task: TaskKind,
    pub user_id: UserId,
    pub report: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persona_version: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub metadata: serde_json::Value,
    pub reports: Vec<MethodResult>,
    #[serde(skip)]
    pub per_user: Vec<UserResult>,
}

fn metadata(plan: &ExperimentPlan, res: &Resources, users: &[(TaskKind, Vec<UserId>)]) -> serde_json::Value {
    serde_json::json!({
        "f1_averaging": "macro over labels present in predictions or references",
        "parse_failure_policy": {
            "classification": "scored as incorrect",
            "rating": format!("imputed as {IMPUTED_RATING}"),
        },
        "membank": format!("membank-like approximation, note rebuilt every {MEMBANK_CHUNK} records"),
        "seed": plan.seed,
        "top_users": plan.top_users,
        "temperature": plan.params.temperature,
        "max_tokens": plan.params.max_tokens,
        "agent": plan.run,
        "alignment": plan.alignment,
        "encoder": res.encoder.fingerprint(),
        "users": users.iter().map(|(t, u)| (t.slug().to_string(), serde_json::json!(u))).collect::<serde_json::Map<_, _>>(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let err = |e: std::io::Error| BenchError::Output { path: path.to_path_buf(), message: e.to_string() };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, bytes).map_err(err)
}

/// Runs every configured method on every task and writes the result files.
///
/// Users are evaluated in parallel; results are merged in user order so the
/// output only depends on the backend's answers.
pub fn run_experiment(plan: &ExperimentPlan, res: &Resources) -> Result<ExperimentResults, BenchError> {
    plan.validate()?;
    let mut reports = Vec::new();
    let mut per_user = Vec::new();
    let mut users_by_task = Vec::new();

    for spec in &plan.tasks {
        let task = spec.definition.task;
        let datasets = select_top_users(load_dataset(&spec.data, &spec.definition)?, plan.top_users);
        users_by_task.push((task, datasets.iter().map(|d| d.user.clone()).collect::<Vec<_>>()));
        let pool: Vec<(UserId, InteractionRecord)> = datasets
            .iter()
            .flat_map(|d| d.profile_records.iter().map(move |r| (d.user.clone(), r.clone())))
            .collect();

        for &method in &plan.methods {
            let log_dir = plan.log_dir(task, method);
            let store = plan.method_store(task, method);
            let ctx = MethodContext {
                llm: res.llm.as_ref(),
                knowledge: res.knowledge.as_ref(),
                encoder: &res.encoder,
                params: &plan.params,
                run: plan.run,
                alignment: plan.alignment,
                summary: &plan.summary,
                seed: plan.seed,
                icl_pool: &pool,
                log_dir: Some(&log_dir),
                store: Some(&store),
            };
            tracing::info!(%method, task = task.slug(), users = datasets.len(), "running method");
            let outputs: Vec<MethodOutput> = datasets.par_iter().map(|d| run_method(method, d, &ctx)).collect();

            let metrics_err = |source| BenchError::Metrics { method: method.to_string(), task: task.slug().into(), source };
            let mut all_preds = Vec::new();
            let mut all_refs = Vec::new();
            for (d, out) in datasets.iter().zip(outputs) {
                for w in &out.warnings {
                    tracing::warn!(user = %d.user, %method, "{w}");
                }
                let refs: Vec<String> = d.test_records.iter().map(|r| r.ground_truth.clone()).collect();
                if !refs.is_empty() {
                    let report = compute_metrics(&out.predictions, &refs, task, &d.label_set).map_err(metrics_err)?;
                    per_user.push(UserResult {
                        method,
                        task,
                        user_id: d.user.clone(),
                        report,
                        persona_version: out.persona.as_ref().map(|p| p.version),
                        warnings: out.warnings.clone(),
                    });
                }
                all_preds.extend(out.predictions);
                all_refs.extend(refs);
            }
            let report = compute_metrics(&all_preds, &all_refs, task, &spec.definition.labels).map_err(metrics_err)?;
            reports.push(MethodResult { method, task, report, n_users: datasets.len() });
        }
    }

    let results = ExperimentResults { metadata: metadata(plan, res, &users_by_task), reports, per_user };
    let json = serde_json::to_vec_pretty(&results).expect("results serialize");
    write_file(&plan.run_dir.join(RESULTS_FILE), &json)?;
    let mut lines = Vec::new();
    for u in &results.per_user {
        serde_json::to_writer(&mut lines, u).expect("per-user result serializes");
        lines.push(b'\n');
    }
    write_file(&plan.run_dir.join(PER_USER_FILE), &lines)?;
    Ok(results)
}

/// A prompt that mentions a held-out query outside that query's own
/// evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    pub call_index: usize,
    pub user: UserId,
    pub query: String,
}

/// The question a call is answering: the text after the last `Question: `
/// marker of its first user message.
fn call_target(call: &CallRecord) -> Option<&str> {
    let first_user = call.messages.iter().find(|m| m.role == Role::User)?;
    let text = first_user.content.as_str();
    match text.rfind("\nQuestion: ") {
        Some(i) => Some(&text[i + "\nQuestion: ".len()..]),
        None => text.strip_prefix("Question: "),
    }
}

/// Temporal-leakage scan: every call whose prompt contains a test query must
/// be an evaluation of exactly that query, and no prompt may contain a test
/// query together with its ground truth as a past answer.
pub fn leakage_scan(calls: &[CallRecord], datasets: &[UserDataset]) -> Vec<Leak> {
    let mut leaks = Vec::new();
    for (i, call) in calls.iter().enumerate() {
        let prompt = call.prompt();
        let target = call_target(call);
        for d in datasets {
            for r in &d.test_records {
                if !prompt.contains(&r.query) {
                    continue;
                }
                let own_eval = target.is_some_and(|t| t.starts_with(&r.query));
                let as_memory = prompt.contains(&format!("Past Q: {}\nUser's answer: {}", r.query, r.ground_truth));
                if !own_eval || as_memory {
                    leaks.push(Leak { call_index: i, user: d.user.clone(), query: r.query.clone() });
                }
            }
        }
    }
    leaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;
    use crate::model::Metadata;

    fn call(system: &str, user: &str) -> CallRecord {
        CallRecord {
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            response: Some("x".into()),
            error: None,
        }
    }

    fn dataset() -> UserDataset {
        UserDataset {
            user: UserId::new("u").unwrap(),
            task: TaskKind::MovieTagging,
            profile_records: vec![InteractionRecord::new("old question", "a", Metadata::at(0)).unwrap()],
            test_records: vec![InteractionRecord::new("held out question", "b", Metadata::at(1)).unwrap()],
            label_set: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn leakage_scan_flags_foreign_mentions() {
        let ds = [dataset()];
        let ok = call("p", "tools...\n\nQuestion: held out question\n\nAnswer with...");
        assert!(leakage_scan(&[ok], &ds).is_empty());
        let bad = call("p", "Past Q: held out question\nUser's answer: b\n\nQuestion: other");
        assert_eq!(leakage_scan(&[bad], &ds).len(), 1);
        let critic = call("p", "You are a meticulous evaluator\n\nQuestion: old question");
        assert!(leakage_scan(&[critic], &ds).is_empty());
        let summary = call("held out question", "User history");
        assert_eq!(leakage_scan(&[summary], &ds).len(), 1);
    }
}
