//! Persona analysis: pairwise Jaccard similarity and embedding export.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Persona;
use crate::embedding::{EmbeddingError, Encoder};
use crate::model::UserId;
use crate::text::token_set;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no personas to analyze")]
    Empty,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

/// Token handling recorded alongside every matrix.
pub const TOKENIZATION: &str = "lowercase, split on non-alphanumerics, token sets";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub user_ids: Vec<UserId>,
    pub values: Vec<Vec<f64>>,
    pub tokenization: String,
    /// Set when two personas had no tokens at all; their similarity is 1.0.
    pub empty_pairs: bool,
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Option<f64> {
    let union = a.union(b).count();
    if union == 0 {
        return None;
    }
    Some(a.intersection(b).count() as f64 / union as f64)
}

pub fn jaccard_matrix(personas: &[Persona]) -> Result<SimilarityMatrix, AnalysisError> {
    if personas.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let sets: Vec<BTreeSet<String>> = personas.iter().map(|p| token_set(&p.text)).collect();
    let n = sets.len();
    let mut values = vec![vec![1.0; n]; n];
    let mut empty_pairs = false;
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard(&sets[i], &sets[j]).unwrap_or_else(|| {
                empty_pairs = true;
                1.0
            });
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    if sets.iter().any(BTreeSet::is_empty) {
        empty_pairs = true;
    }
    Ok(SimilarityMatrix {
        user_ids: personas.iter().map(|p| p.user.clone()).collect(),
        values,
        tokenization: TOKENIZATION.to_string(),
        empty_pairs,
    })
}

impl SimilarityMatrix {
    /// CSV with a `user_id` header row and column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["user_id".to_string()];
        header.extend(self.user_ids.iter().map(|u| u.to_string()));
        w.write_record(&header).expect("in-memory csv");
        for (u, row) in self.user_ids.iter().zip(&self.values) {
            let mut rec = vec![u.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

/// Writes `user_id,v0,...,v{dim-1}` with one row per persona.
pub fn export_embeddings(personas: &[Persona], encoder: &Encoder, path: &Path) -> Result<usize, AnalysisError> {
    let texts: Vec<&str> = personas.iter().map(|p| p.text.as_str()).collect();
    let vectors = encoder.embed_batch(&texts)?;
    let io = |e: &dyn std::fmt::Display| AnalysisError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(&e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    let mut header = vec!["user_id".to_string()];
    header.extend((0..encoder.dim()).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| io(&e))?;
    for (p, v) in personas.iter().zip(&vectors) {
        let mut rec = vec![p.user.to_string()];
        rec.extend(v.as_slice().iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))?;
    Ok(personas.len())
}
