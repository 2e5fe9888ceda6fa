use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InteractionRecord, Metadata, TaskKind, UserId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

/// Contents of a task definition file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub task: TaskKind,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl TaskDefinition {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        let def: TaskDefinition = serde_json::from_str(&raw).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        def.normalized().map_err(|message| DatasetError::Format { path: path.to_path_buf(), line: 1, message })
    }

    /// Fills in the rating scale and rejects empty classification label sets.
    pub fn normalized(mut self) -> Result<Self, String> {
        if self.labels.is_empty() {
            if self.task.is_rating() {
                self.labels = self.task.default_labels();
            } else {
                return Err(format!("task {} needs a non-empty label set", self.task.slug()));
            }
        }
        if self.labels.iter().any(|l| l.trim().is_empty()) {
            return Err("labels must not be blank".into());
        }
        Ok(self)
    }
}

/// One user's chronologically split data for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDataset {
    pub user: UserId,
    pub task: TaskKind,
    pub profile_records: Vec<InteractionRecord>,
    pub test_records: Vec<InteractionRecord>,
    pub label_set: Vec<String>,
}

impl UserDataset {
    pub fn total_records(&self) -> usize {
        self.profile_records.len() + self.test_records.len()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    query: String,
    ground_truth: String,
    #[serde(default)]
    timestamp: Option<u64>,
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    extra: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    user_id: String,
    records: Vec<RawRecord>,
    split_index: usize,
}

/// Parses a JSON-lines user file.
///
/// Records are stably sorted by timestamp (a missing timestamp defaults to
/// the record's position) and then split at `split_index`.
pub fn load_dataset(path: &Path, definition: &TaskDefinition) -> Result<Vec<UserDataset>, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&raw, path, definition)
}

pub fn parse_dataset(raw: &str, path: &Path, definition: &TaskDefinition) -> Result<Vec<UserDataset>, DatasetError> {
    let mut out: Vec<UserDataset> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| DatasetError::Format { path: path.to_path_buf(), line: lineno, message };
        if line.trim().is_empty() {
            continue;
        }
        let user: RawUser = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = UserId::new(user.user_id).map_err(|e| err(e.to_string()))?;
        if out.iter().any(|d| d.user == id) {
            return Err(err(format!("duplicate user {id}")));
        }
        let mut records = Vec::with_capacity(user.records.len());
        for (j, r) in user.records.into_iter().enumerate() {
            let metadata = Metadata {
                timestamp: r.timestamp.unwrap_or(j as u64),
                session_id: r.session_id,
                extra: r.extra,
            };
            let rec = InteractionRecord::new(r.query, r.ground_truth, metadata).map_err(|e| err(format!("record {j}: {e}")))?;
            if definition.task.is_rating() && rec.ground_truth.trim().parse::<u8>().map_or(true, |v| !(1..=5).contains(&v)) {
                return Err(err(format!("record {j}: rating {:?} is not an integer in 1..=5", rec.ground_truth)));
            }
            records.push(rec);
        }
        if user.split_index == 0 || user.split_index > records.len() {
            return Err(err(format!(
                "split_index {} out of range 1..={} for user {id}",
                user.split_index,
                records.len()
            )));
        }
        records.sort_by_key(InteractionRecord::timestamp);
        let test_records = records.split_off(user.split_index);
        out.push(UserDataset {
            user: id,
            task: definition.task,
            profile_records: records,
            test_records,
            label_set: definition.labels.clone(),
        });
    }
    Ok(out)
}

/// The `count` users with the most records; ties go to the smaller user id.
pub fn select_top_users(mut datasets: Vec<UserDataset>, count: usize) -> Vec<UserDataset> {
    datasets.sort_by(|a, b| b.total_records().cmp(&a.total_records()).then_with(|| a.user.cmp(&b.user)));
    datasets.truncate(count);
    datasets
}
