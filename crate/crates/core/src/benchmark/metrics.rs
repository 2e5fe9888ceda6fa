use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, Prediction, TaskKind};

/// Rating used in place of an unparseable rating prediction.
pub const IMPUTED_RATING: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("no examples to score")]
    Empty,
    #[error("reference {index} ({value:?}) is not an integer rating")]
    BadRating { index: usize, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse: Option<f64>,
    pub n_examples: usize,
    pub n_parse_failures: usize,
}

fn parse_rating(index: usize, value: &str) -> Result<f64, MetricError> {
    value
        .trim()
        .parse::<i64>()
        .map(|v| v as f64)
        .map_err(|_| MetricError::BadRating { index, value: value.to_string() })
}

/// Scores `predictions` against reference labels.
///
/// Classification: accuracy plus macro F1 over the labels that occur in the
/// label set, the references or the predictions, skipping labels that appear
/// in neither predictions nor references. Parse failures count as wrong.
/// Ratings: MAE and RMSE, with parse failures imputed as [`IMPUTED_RATING`].
pub fn compute_metrics(
    predictions: &[Prediction],
    references: &[String],
    task: TaskKind,
    label_set: &[String],
) -> Result<MetricReport, MetricError> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), references: references.len() });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = predictions.len();
    let n_parse_failures = predictions.iter().filter(|p| p.is_parse_failure()).count();
    let mut report = MetricReport { task, accuracy: None, f1: None, mae: None, rmse: None, n_examples: n, n_parse_failures };

    if task.is_rating() {
        let mut abs = 0.0;
        let mut sq = 0.0;
        for (i, (p, r)) in predictions.iter().zip(references).enumerate() {
            let truth = parse_rating(i, r)?;
            let guess = f64::from(p.label.as_ref().and_then(Label::as_rating).unwrap_or(IMPUTED_RATING));
            let d = guess - truth;
            abs += d.abs();
            sq += d * d;
        }
        report.mae = Some(abs / n as f64);
        report.rmse = Some((sq / n as f64).sqrt());
        return Ok(report);
    }

    let guesses: Vec<Option<&str>> = predictions
        .iter()
        .map(|p| match &p.label {
            Some(Label::Class(c)) => Some(c.as_str()),
            _ => None,
        })
        .collect();
    let correct = guesses.iter().zip(references).filter(|(g, r)| **g == Some(r.as_str())).count();
    report.accuracy = Some(correct as f64 / n as f64);

    let labels: BTreeSet<&str> = label_set
        .iter()
        .map(String::as_str)
        .chain(references.iter().map(String::as_str))
        .chain(guesses.iter().flatten().copied())
        .collect();
    let mut f1_sum = 0.0;
    let mut counted = 0usize;
    for label in labels {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (g, r) in guesses.iter().zip(references) {
            let predicted = *g == Some(label);
            let actual = r == label;
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        if tp + fp + fneg == 0 {
            continue;
        }
        counted += 1;
        f1_sum += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
    }
    report.f1 = Some(if counted == 0 { 0.0 } else { f1_sum / counted as f64 });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(s: &str) -> Prediction {
        Prediction { raw_text: s.into(), label: Some(Label::Class(s.into())) }
    }

    fn rating(r: u8) -> Prediction {
        Prediction { raw_text: r.to_string(), label: Some(Label::Rating(r)) }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn binary_confusion() {
        let preds = ["A", "A", "B", "B"].map(class);
        let r = compute_metrics(&preds, &strings(&["A", "B", "A", "B"]), TaskKind::NewsCategorization, &strings(&["A", "B"]))
            .unwrap();
        assert_eq!(r.accuracy, Some(0.5));
        assert!((r.f1.unwrap() - 0.5).abs() < 1e-12);
        assert!(r.mae.is_none());
    }

    #[test]
    fn ratings() {
        let r = compute_metrics(&[rating(3), rating(5)], &strings(&["3", "4"]), TaskKind::ProductRating, &[]).unwrap();
        assert!((r.mae.unwrap() - 0.5).abs() < 1e-9);
        assert!((r.rmse.unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(r.accuracy.is_none());
    }

    #[test]
    fn failures_are_scored() {
        let r = compute_metrics(
            &[Prediction::failed("??"), rating(1)],
            &strings(&["5", "1"]),
            TaskKind::ProductRating,
            &[],
        )
        .unwrap();
        assert_eq!(r.n_parse_failures, 1);
        assert_eq!(r.mae, Some(1.0));
        let r = compute_metrics(&[Prediction::failed("??")], &strings(&["A"]), TaskKind::MovieTagging, &strings(&["A"]))
            .unwrap();
        assert_eq!((r.accuracy, r.f1), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_metrics(&[rating(1)], &[], TaskKind::ProductRating, &[]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert_eq!(compute_metrics(&[], &[], TaskKind::ProductRating, &[]), Err(MetricError::Empty));
        assert!(matches!(
            compute_metrics(&[rating(1)], &strings(&["x"]), TaskKind::ProductRating, &[]),
            Err(MetricError::BadRating { index: 0, .. })
        ));
    }
}
