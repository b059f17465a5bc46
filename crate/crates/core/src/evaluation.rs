//! Scoring: k-means cost, permutation-matched accuracy and the
//! structured-versus-IID cost ratio.

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{KfedError, Result};
use crate::linalg::{squared_distance, DataMatrix};
use crate::local::{cluster_means, Clustering};

/// `Σ_j Σ_{i∈T_j} ‖A_i − μ(T_j)‖²`, with means taken from the rows.
pub fn kmeans_cost(a: &DataMatrix, t: &Clustering) -> f64 {
    labels_cost(a, &t.assignment, t.k).expect("clustering covers the matrix")
}

pub fn labels_cost(a: &DataMatrix, labels: &[usize], k: usize) -> Result<f64> {
    let means = cluster_means(a, labels, k)?;
    Ok(a
        .rows()
        .zip(labels)
        .map(|(row, &l)| squared_distance(row, means[l].as_ref().expect("row's own cluster")))
        .sum())
}

/// Best label bijection between two labelings of the same rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub accuracy: f64,
    pub misclassified: usize,
    /// `permutation[p]` is the truth label matched to predicted label `p`;
    /// padded to `max(k_pred, k_true)` entries.
    pub permutation: Vec<usize>,
}

impl Matching {
    pub fn map(&self, pred_label: usize) -> usize {
        self.permutation[pred_label]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub kmeans_cost: f64,
    pub accuracy: f64,
    pub misclassified: usize,
    pub permutation: Vec<usize>,
}

/// Maximizes agreement over label bijections (Hungarian method on the
/// contingency matrix). Label sets of unequal size are padded with empty
/// pseudo-clusters.
pub fn matched_accuracy(pred: &[usize], truth: &[usize]) -> Result<Matching> {
    if pred.len() != truth.len() {
        return Err(KfedError::Shape(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(Matching {
            accuracy: 1.0,
            misclassified: 0,
            permutation: Vec::new(),
        });
    }
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let size = kp.max(kt);
    let mut table = Matrix::new(size, size, 0i64);
    for (&p, &t) in pred.iter().zip(truth) {
        table[(p, t)] += 1;
    }
    let (agree, permutation) = kuhn_munkres(&table);
    let agree = agree as usize;
    Ok(Matching {
        accuracy: agree as f64 / n as f64,
        misclassified: n - agree,
        permutation,
    })
}

pub fn evaluate(a: &DataMatrix, pred: &Clustering, truth: &[usize]) -> Result<EvalResult> {
    let m = matched_accuracy(&pred.assignment, truth)?;
    Ok(EvalResult {
        kmeans_cost: labels_cost(a, &pred.assignment, pred.k)?,
        accuracy: m.accuracy,
        misclassified: m.misclassified,
        permutation: m.permutation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("degenerate: random matches oracle (random cost {random}, oracle cost {oracle})")]
pub struct DegenerateRatio {
    pub oracle: f64,
    pub random: f64,
}

/// `(φ(k') − φ*) / (φ(k) − φ*)`; below 1 means the structured partition
/// landed closer to the oracle cost.
pub fn cost_ratio_report(oracle: f64, structured: f64, random: f64) -> std::result::Result<f64, DegenerateRatio> {
    if random <= oracle + 1e-12 {
        return Err(DegenerateRatio { oracle, random });
    }
    Ok((structured - oracle) / (random - oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        let a = DataMatrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let one = Clustering::from_labels(&a, &[0, 0], 1).unwrap();
        assert_eq!(kmeans_cost(&a, &one), 2.0);
        let single = Clustering::from_labels(&a, &[0, 1], 2).unwrap();
        assert_eq!(kmeans_cost(&a, &single), 0.0);
    }

    #[test]
    fn accuracy_identity_and_shift() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(matched_accuracy(&truth, &truth).unwrap().accuracy, 1.0);
        let shifted: Vec<usize> = truth.iter().map(|l| (l + 1) % 3).collect();
        let m = matched_accuracy(&shifted, &truth).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.map(1), 0);
    }

    #[test]
    fn accuracy_pads_unequal_label_counts() {
        let m = matched_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.misclassified, 2);
        assert_eq!(m.permutation.len(), 2);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(cost_ratio_report(1.0, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(cost_ratio_report(1.0, 3.0, 3.0).unwrap(), 1.0);
        assert!(cost_ratio_report(1.0, 2.0, 1.0).is_err());
    }
}
