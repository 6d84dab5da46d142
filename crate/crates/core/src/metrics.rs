//! Ranking-based average precision and its macro average over classes.

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::Matrix;

/// Average precision of one ranking.
///
/// Samples are sorted by descending score with ties broken by ascending
/// index, and AP is the mean of precision@k over the ranks k that hold a
/// positive. Returns `None` when `labels` has no positive.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// `None` for classes without positives in the evaluation labels.
    pub per_class_ap: Vec<Option<f64>>,
    pub map_macro: f64,
    pub skipped_classes: Vec<usize>,
}

impl MetricsReport {
    /// CSV fields: `map_macro` followed by one AP per class (empty when skipped).
    pub fn csv_fields(&self) -> Vec<String> {
        std::iter::once(self.map_macro.to_string())
            .chain(
                self.per_class_ap
                    .iter()
                    .map(|ap| ap.map(|v| v.to_string()).unwrap_or_default()),
            )
            .collect()
    }
}

pub fn map_macro(probs: &Matrix, labels: &LabelMatrix) -> Result<MetricsReport> {
    map_macro_with(probs, labels, Exec::default())
}

pub fn map_macro_with(probs: &Matrix, labels: &LabelMatrix, exec: Exec) -> Result<MetricsReport> {
    if probs.shape() != labels.shape() {
        return Err(Error::shape("map_macro", probs.shape(), labels.shape()));
    }
    let (n, c) = probs.shape();
    let per_class_ap = exec.for_work(n * c * 16).map(c, |j| {
        let scores: Vec<f64> = (0..n).map(|i| probs.get(i, j)).collect();
        let col: Vec<u8> = (0..n).map(|i| labels.get(i, j)).collect();
        average_precision(&scores, &col)
    });
    let skipped_classes: Vec<usize> = per_class_ap
        .iter()
        .enumerate()
        .filter_map(|(j, ap)| ap.is_none().then_some(j))
        .collect();
    let scored: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::DegenerateEvaluation);
    }
    let map_macro = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(MetricsReport {
        per_class_ap,
        map_macro,
        skipped_classes,
    })
}
