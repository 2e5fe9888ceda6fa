//! Per-user memory: the episodic buffer of raw interactions, similarity
//! retrieval over it, and the LLM-written semantic profile.

mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{top_k_where, EmbeddingError, Encoder, Vector};
use crate::llm::{BackendError, ChatBackend, ChatMessage, CompletionParams};
use crate::model::{InteractionRecord, ModelError, TaskKind, UserId};
use crate::text::{has_placeholder, render};

pub use store::{UserStore, EPISODIC_FILE, PERSONA_FILE, PROFILE_FILE, STORE_FORMAT_VERSION};

/// Records retrieved per query unless configured otherwise.
pub const DEFAULT_K: usize = 4;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("episodic buffer for user {0} is empty")]
    EmptyBuffer(UserId),
    #[error("encoder mismatch: buffer built with `{buffer}`, got `{encoder}`")]
    EncoderMismatch { buffer: String, encoder: String },
    #[error("retrieval size k must be at least 1")]
    InvalidK,
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("summarization template must contain {{task}} and {{history}}")]
    BadTemplate,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
}

/// Text that represents a stored interaction in the embedding space.
pub fn memory_text(record: &InteractionRecord) -> String {
    format!("Q: {}\nA: {}", record.query, record.ground_truth)
}

/// Chronologically ordered interactions of one user with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicBuffer {
    user: UserId,
    records: Vec<InteractionRecord>,
    embeddings: Vec<Vector>,
    encoder_fingerprint: String,
}

impl EpisodicBuffer {
    pub fn new(user: UserId, encoder: &Encoder) -> Self {
        Self {
            user,
            records: Vec::new(),
            embeddings: Vec::new(),
            encoder_fingerprint: encoder.fingerprint(),
        }
    }

    /// Builds a buffer from records in any order, embedding them in one batch.
    pub fn from_records(
        user: UserId,
        mut records: Vec<InteractionRecord>,
        encoder: &Encoder,
    ) -> Result<Self, MemoryError> {
        for r in &records {
            r.validate()?;
        }
        // Stable sort keeps insertion order among equal timestamps.
        records.sort_by_key(InteractionRecord::timestamp);
        let texts: Vec<String> = records.iter().map(memory_text).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let embeddings = encoder.embed_batch(&refs)?;
        Ok(Self {
            user,
            records,
            embeddings,
            encoder_fingerprint: encoder.fingerprint(),
        })
    }

    /// Reassembles a buffer from already-computed parts. Callers are
    /// responsible for the ordering and length invariants.
    pub(crate) fn from_parts(
        user: UserId,
        records: Vec<InteractionRecord>,
        embeddings: Vec<Vector>,
        encoder_fingerprint: String,
    ) -> Self {
        debug_assert_eq!(records.len(), embeddings.len());
        Self {
            user,
            records,
            embeddings,
            encoder_fingerprint,
        }
    }

    pub fn user(&self) -> &UserId {
        &self.user
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &[Vector] {
        &self.embeddings
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_encoder(&self, encoder: &Encoder) -> Result<(), MemoryError> {
        let fp = encoder.fingerprint();
        if fp != self.encoder_fingerprint {
            return Err(MemoryError::EncoderMismatch {
                buffer: self.encoder_fingerprint.clone(),
                encoder: fp,
            });
        }
        Ok(())
    }

    /// Inserts `record` after every record with a timestamp `<=` its own and
    /// returns the position it landed at.
    pub fn append_interaction(&mut self, record: InteractionRecord, encoder: &Encoder) -> Result<usize, MemoryError> {
        self.check_encoder(encoder)?;
        record.validate()?;
        let embedding = encoder.embed(&memory_text(&record))?;
        let pos = self.records.partition_point(|r| r.timestamp() <= record.timestamp());
        self.records.insert(pos, record);
        self.embeddings.insert(pos, embedding);
        Ok(pos)
    }

    /// Indices of the `k` most similar records, skipping `masked` positions.
    pub fn retrieve_indices(
        &self,
        query: &str,
        k: usize,
        encoder: &Encoder,
        masked: &[usize],
    ) -> Result<Vec<usize>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        if self.is_empty() {
            return Err(MemoryError::EmptyBuffer(self.user.clone()));
        }
        self.check_encoder(encoder)?;
        let q = encoder.embed(query)?;
        Ok(top_k_where(&q, &self.embeddings, k, |i| !masked.contains(&i))?)
    }

    /// The `k` records most similar to `query`, best first.
    pub fn retrieve(&self, query: &str, k: usize, encoder: &Encoder) -> Result<Vec<&InteractionRecord>, MemoryError> {
        Ok(self
            .retrieve_indices(query, k, encoder, &[])?
            .into_iter()
            .map(|i| &self.records[i])
            .collect())
    }

    /// Positions of the `n` most recent records, oldest first.
    pub fn latest_indices(&self, n: usize) -> std::ops::Range<usize> {
        self.records.len().saturating_sub(n)..self.records.len()
    }
}

/// Task-conditioned summarization prompt. The template must contain the
/// `{task}` and `{history}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizationPrompt {
    template: String,
    /// Above this many rendered characters only the most recent
    /// `max_recent_records` interactions are included.
    pub budget_chars: usize,
    pub max_recent_records: usize,
}

pub const DEFAULT_SUMMARY_TEMPLATE: &str = "\
You are building a long-term profile of a user from their past {task} interactions.
Summarize the user's stable preferences, interests, habits and tendencies that explain how they answer. \
Write a concise profile in plain prose; do not list the individual interactions.

User history:
{history}

User profile:";

impl Default for SummarizationPrompt {
    fn default() -> Self {
        Self {
            template: DEFAULT_SUMMARY_TEMPLATE.to_string(),
            budget_chars: 24_000,
            max_recent_records: 50,
        }
    }
}

impl SummarizationPrompt {
    pub fn new(template: impl Into<String>) -> Result<Self, MemoryError> {
        let template = template.into();
        if !has_placeholder(&template, "task") || !has_placeholder(&template, "history") {
            return Err(MemoryError::BadTemplate);
        }
        Ok(Self {
            template,
            ..Self::default()
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    fn render_history(records: &[InteractionRecord]) -> String {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. Q: {}\n   A: {}", i + 1, r.query, r.ground_truth))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Renders the prompt for `records` (chronological), trimming to the most
    /// recent records when the full rendering exceeds the character budget.
    pub fn render(&self, task: TaskKind, records: &[InteractionRecord]) -> String {
        let full = render(
            &self.template,
            &[("task", task.display_name()), ("history", &Self::render_history(records))],
        );
        if full.chars().count() <= self.budget_chars || records.len() <= self.max_recent_records {
            return full;
        }
        let recent = &records[records.len() - self.max_recent_records..];
        render(
            &self.template,
            &[("task", task.display_name()), ("history", &Self::render_history(recent))],
        )
    }
}

/// Abstracted long-term description of a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticProfile {
    pub user: UserId,
    pub text: String,
    pub source_count: usize,
    /// Timestamp of the newest interaction the profile was built from, so
    /// profiles are reproducible from the same data.
    pub created_at: u64,
    pub task: TaskKind,
}

/// Summarizes the whole buffer into a profile with exactly one backend call.
pub fn summarize_profile(
    buffer: &EpisodicBuffer,
    task: TaskKind,
    prompt: &SummarizationPrompt,
    llm: &dyn ChatBackend,
    params: &CompletionParams,
) -> Result<SemanticProfile, MemoryError> {
    if buffer.is_empty() {
        return Err(MemoryError::EmptyBuffer(buffer.user().clone()));
    }
    let rendered = prompt.render(task, buffer.records());
    let reply = llm.complete(&[ChatMessage::user(rendered)], params)?;
    let text = reply.trim();
    if text.is_empty() {
        return Err(MemoryError::EmptyCompletion);
    }
    Ok(SemanticProfile {
        user: buffer.user().clone(),
        text: text.to_string(),
        source_count: buffer.len(),
        created_at: buffer.records().last().map(InteractionRecord::timestamp).unwrap_or(0),
        task,
    })
}
