//! Text encoder and similarity ranking behind episodic retrieval.
//!
//! The default encoder is a deterministic hashed term-frequency model, so
//! retrieval is reproducible offline. An HTTP encoder can be plugged in for
//! live runs; it must return vectors of the configured dimension.

use std::cmp::Ordering;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("external encoder failed: {0}")]
    External(String),
    #[error("encoder returned a non-finite component at position {0}")]
    NonFinite(usize),
}

/// Dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Deterministic bag-of-words encoder: each non-stopword token is hashed
/// (FNV-1a, seeded) into one of `dim` buckets, counts are L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedTfIdf {
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for HashedTfIdf {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

impl HashedTfIdf {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim, seed }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(self.seed, token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed(&self, text: &str) -> Vector {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text).iter().filter(|t| !is_stopword(t)) {
            v[self.bucket(token)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Vector(v)
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it", "its", "of", "on",
    "or", "that", "the", "this", "to", "was", "were", "with",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// HTTP encoder: `POST {"texts": [...]}` returning `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalEncoder {
    pub endpoint: String,
    pub dim: usize,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl ExternalEncoder {
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbeddingError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(token) = &self.auth_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbeddingError::External(e.to_string()))?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::External(format!("bad response body: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::External(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                let v = Vector(v);
                if v.dim() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: v.dim(),
                        right: self.dim,
                    });
                }
                if let Some(i) = v.0.iter().position(|x| !x.is_finite()) {
                    return Err(EmbeddingError::NonFinite(i));
                }
                Ok(v)
            })
            .collect()
    }
}

/// Text encoder used for both queries and stored memories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    HashedTfIdf(HashedTfIdf),
    External(ExternalEncoder),
}

impl Default for Encoder {
    fn default() -> Self {
        Encoder::HashedTfIdf(HashedTfIdf::default())
    }
}

impl Encoder {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Encoder::HashedTfIdf(HashedTfIdf::new(dim, seed))
    }

    pub fn dim(&self) -> usize {
        match self {
            Encoder::HashedTfIdf(h) => h.dim,
            Encoder::External(e) => e.dim,
        }
    }

    /// Identifies the vector space; stored embeddings are only valid under the
    /// encoder with the same fingerprint.
    pub fn fingerprint(&self) -> String {
        match self {
            Encoder::HashedTfIdf(h) => format!("hashed-tf:v1:dim={}:seed={}", h.dim, h.seed),
            Encoder::External(e) => format!("external:{}:dim={}", e.endpoint, e.dim),
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vector, EmbeddingError> {
        match self {
            Encoder::HashedTfIdf(h) => Ok(h.embed(text)),
            Encoder::External(e) => e
                .embed_batch(&[text])
                .map(|mut v| v.pop().expect("length checked by embed_batch")),
        }
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbeddingError> {
        match self {
            Encoder::HashedTfIdf(h) => Ok(texts.iter().map(|t| h.embed(t)).collect()),
            Encoder::External(_) if texts.is_empty() => Ok(Vec::new()),
            Encoder::External(e) => e.embed_batch(texts),
        }
    }
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Indices of the `k` corpus vectors most similar to `query`, best first.
/// Equal similarities keep the smaller (older) index first.
pub fn top_k(query: &Vector, corpus: &[Vector], k: usize) -> Result<Vec<usize>, EmbeddingError> {
    top_k_where(query, corpus, k, |_| true)
}

/// [`top_k`] restricted to the indices accepted by `keep`.
pub fn top_k_where(
    query: &Vector,
    corpus: &[Vector],
    k: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<usize>, EmbeddingError> {
    let mut scored = Vec::with_capacity(corpus.len());
    for (i, v) in corpus.iter().enumerate() {
        if keep(i) {
            scored.push((i, cosine_similarity(query, v)?));
        }
    }
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    Ok(scored.into_iter().take(k).map(|(i, _)| i).collect())
}
