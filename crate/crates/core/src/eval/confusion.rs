use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary outcome counts for one class against the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// K×K tally; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<u64>,
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::invalid(format!("class index out of range: true {t}, predicted {p}, K = {k}")));
        }
        cm.cells[t * k + p] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix { k, cells: vec![0; k * k] }
    }

    /// Row-major K×K counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { k, cells: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.cells[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape(format!("cannot merge {0}×{0} into {1}×{1}", other.k, self.k)));
        }
        self.cells.iter_mut().zip(&other.cells).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// One-vs-rest reduction for class `c`.
    pub fn ovr_counts(&self, c: usize) -> ConfusionCounts {
        assert!(c < self.k, "class {c} out of range for K = {}", self.k);
        let tp = self.get(c, c);
        let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.k).map(|t| self.get(t, c)).sum();
        let (fn_, fp) = (row - tp, col - tp);
        ConfusionCounts { tp, tn: self.total() - tp - fn_ - fp, fp, fn_ }
    }
}
