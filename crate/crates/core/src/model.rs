//! Shared domain types: users, interaction records, tasks and predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("user id must be non-empty")]
    EmptyUserId,
    #[error("interaction record has an empty {0}")]
    EmptyField(&'static str),
    #[error("unknown task kind `{0}`")]
    UnknownTask(String),
}

/// Stable, non-empty user identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(ModelError::EmptyUserId);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<UserId> for String {
    fn from(id: UserId) -> Self {
        id.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Auxiliary context attached to each interaction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    /// Seconds since the Unix epoch. Datasets without timestamps use the
    /// record index so chronological order is preserved.
    pub timestamp: u64,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    pub fn at(timestamp: u64) -> Self {
        Self {
            timestamp,
            ..Self::default()
        }
    }
}

/// One `(query, ground truth, metadata)` triple from a user's history.
///
/// Serializes flat: `{"query", "ground_truth", "timestamp", "session_id", "extra"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub query: String,
    pub ground_truth: String,
    #[serde(flatten)]
    pub metadata: Metadata,
}

impl InteractionRecord {
    pub fn new(
        query: impl Into<String>,
        ground_truth: impl Into<String>,
        metadata: Metadata,
    ) -> Result<Self, ModelError> {
        let record = Self {
            query: query.into(),
            ground_truth: ground_truth.into(),
            metadata,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.query.trim().is_empty() {
            return Err(ModelError::EmptyField("query"));
        }
        if self.ground_truth.trim().is_empty() {
            return Err(ModelError::EmptyField("ground_truth"));
        }
        Ok(())
    }

    pub fn timestamp(&self) -> u64 {
        self.metadata.timestamp
    }
}

/// The four personalized decision-making tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CitationIdentification,
    MovieTagging,
    NewsCategorization,
    ProductRating,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::CitationIdentification,
        TaskKind::MovieTagging,
        TaskKind::NewsCategorization,
        TaskKind::ProductRating,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::CitationIdentification => "citation_identification",
            TaskKind::MovieTagging => "movie_tagging",
            TaskKind::NewsCategorization => "news_categorization",
            TaskKind::ProductRating => "product_rating",
        }
    }

    /// Human-readable name used inside prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::CitationIdentification => "citation identification",
            TaskKind::MovieTagging => "movie tagging",
            TaskKind::NewsCategorization => "news categorization",
            TaskKind::ProductRating => "product rating",
        }
    }

    pub fn is_rating(self) -> bool {
        matches!(self, TaskKind::ProductRating)
    }

    /// Label set implied by the task itself (only ratings have one).
    pub fn default_labels(self) -> Vec<String> {
        match self {
            TaskKind::ProductRating => (1..=5).map(|r| r.to_string()).collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TaskKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "citation_identification" | "citation" | "lamp_1" => Ok(TaskKind::CitationIdentification),
            "movie_tagging" | "movies" | "lamp_2m" => Ok(TaskKind::MovieTagging),
            "news_categorization" | "news" | "lamp_2n" => Ok(TaskKind::NewsCategorization),
            "product_rating" | "rating" | "lamp_3" => Ok(TaskKind::ProductRating),
            _ => Err(ModelError::UnknownTask(s.to_string())),
        }
    }
}

/// A parsed answer: a class label or an integer rating in `1..=5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Rating(u8),
    Class(String),
}

impl Label {
    pub fn as_rating(&self) -> Option<u8> {
        match self {
            Label::Rating(r) => Some(*r),
            Label::Class(_) => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Rating(r) => write!(f, "{r}"),
            Label::Class(c) => f.write_str(c),
        }
    }
}

/// Raw model output together with its parsed label. `label == None` marks a
/// parse failure, which the metrics score explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw_text: String,
    pub label: Option<Label>,
}

impl Prediction {
    pub fn failed(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            label: None,
        }
    }

    pub fn is_parse_failure(&self) -> bool {
        self.label.is_none()
    }

    /// Parses `raw_text`, folding a parse failure into `label: None`.
    pub fn from_raw(raw_text: impl Into<String>, task: TaskKind, label_set: &[String]) -> Self {
        let raw_text = raw_text.into();
        match parse_label(&raw_text, task, label_set) {
            Ok(p) => p,
            Err(_) => Prediction::failed(raw_text),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no label found in model output {raw_text:?}")]
pub struct ParseFailure {
    pub raw_text: String,
}

/// Extracts the task label from free model text.
///
/// Ratings take the first integer token, clamped to `1..=5`. Classification
/// scans the text left to right and, at the first position where any label
/// matches (case-insensitive, not glued to neighbouring alphanumerics), picks
/// the longest matching label, so "live action" beats "action".
pub fn parse_label(raw_text: &str, task: TaskKind, label_set: &[String]) -> Result<Prediction, ParseFailure> {
    let label = if task.is_rating() {
        first_integer(raw_text).map(|n| Label::Rating(n.clamp(1, 5) as u8))
    } else {
        first_label_match(raw_text, label_set).map(Label::Class)
    };
    match label {
        Some(label) => Ok(Prediction {
            raw_text: raw_text.to_string(),
            label: Some(label),
        }),
        None => Err(ParseFailure {
            raw_text: raw_text.to_string(),
        }),
    }
}

fn first_integer(text: &str) -> Option<u64> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(|c| c.is_ascii_digit()).collect();
    // Saturate absurdly long digit runs; they clamp to 5 anyway.
    Some(digits.parse::<u64>().unwrap_or(u64::MAX))
}

fn first_label_match(text: &str, label_set: &[String]) -> Option<String> {
    let haystack = text.to_lowercase();
    let mut candidates: Vec<(String, &String)> = label_set
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| (l.to_lowercase(), l))
        .collect();
    candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut best: Option<(usize, usize, &String)> = None;
    for (needle, original) in &candidates {
        let starts = haystack
            .char_indices()
            .map(|(i, _)| i)
            .filter(|&i| haystack[i..].starts_with(needle.as_str()));
        for pos in starts {
            if !on_boundary(&haystack, pos, needle) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bpos, blen, _)) => pos < bpos || (pos == bpos && needle.len() > blen),
            };
            if better {
                best = Some((pos, needle.len(), original));
            }
            break;
        }
    }
    best.map(|(_, _, l)| l.clone())
}

fn on_boundary(haystack: &str, pos: usize, needle: &str) -> bool {
    let before_ok = match (haystack[..pos].chars().next_back(), needle.chars().next()) {
        (Some(prev), Some(first)) if first.is_alphanumeric() => !prev.is_alphanumeric(),
        _ => true,
    };
    let end = pos + needle.len();
    let after_ok = match (haystack[end..].chars().next(), needle.chars().next_back()) {
        (Some(next), Some(last)) if last.is_alphanumeric() => !next.is_alphanumeric(),
        _ => true,
    };
    before_ok && after_ok
}
