use serde::{Deserialize, Serialize};

use super::confusion::{ConfusionCounts, ConfusionMatrix};
use crate::error::{Error, Result};

/// A ratio in [0, 1]; zero-denominator ratios are reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric { value: 0.0, undefined: true }
        } else {
            Metric { value: num as f64 / den as f64, undefined: false }
        }
    }
}

impl ConfusionCounts {
    /// (TP + TN) / (TP + TN + FP + FN)
    pub fn accuracy(&self) -> Metric {
        Metric::ratio(self.tp + self.tn, self.total())
    }

    /// TP / (TP + FN)
    pub fn sensitivity(&self) -> Metric {
        Metric::ratio(self.tp, self.tp + self.fn_)
    }

    /// TN / (TN + FP)
    pub fn specificity(&self) -> Metric {
        Metric::ratio(self.tn, self.tn + self.fp)
    }

    /// TP / (TP + FP)
    pub fn precision(&self) -> Metric {
        Metric::ratio(self.tp, self.tp + self.fp)
    }
}

/// Multi-class accuracy, trace / total.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::invalid("accuracy of an empty confusion matrix")),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (divisor k − 1).
    pub std: f64,
}

pub fn aggregate_folds(values: &[f64]) -> Result<Aggregate> {
    let k = values.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 fold values for a standard deviation, got {k}")));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    Ok(Aggregate { mean, std: var.sqrt() })
}
