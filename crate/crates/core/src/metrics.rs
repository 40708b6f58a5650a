//! Classification metrics and mean ± std aggregation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassKey, View};
use crate::{Error, Result};

/// Square count matrix; entry `(i, j)` counts truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.n_classes..(truth + 1) * self.n_classes].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|k| self.get(k, k)).sum()
    }
}

pub fn confusion_matrix(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        for label in [p, t] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: n_classes,
                });
            }
        }
        counts[t * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// Accuracy and macro-averaged precision / recall / F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub confusion: ConfusionMatrix,
}

impl ClassificationMetrics {
    /// A class that is never predicted has precision 0; a class with no
    /// true examples has recall 0; F1 is 0 when precision + recall is 0.
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::Empty("metrics need at least one prediction"));
        }
        let n = confusion.n_classes;
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut f_sum = 0.0;
        for k in 0..n {
            let tp = confusion.get(k, k);
            let p = ratio(tp, confusion.col_sum(k));
            let r = ratio(tp, confusion.row_sum(k));
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        Ok(Self {
            accuracy: confusion.trace() as f64 / total as f64,
            precision_macro: p_sum / n as f64,
            recall_macro: r_sum / n as f64,
            f1_macro: f_sum / n as f64,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_index: u64,
    pub metrics: ClassificationMetrics,
}

impl core::ops::Deref for EpisodeMetrics {
    type Target = ClassificationMetrics;

    fn deref(&self) -> &ClassificationMetrics {
        &self.metrics
    }
}

pub fn classification_metrics(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<ClassificationMetrics> {
    if truth.is_empty() {
        return Err(Error::Empty("metrics need at least one prediction"));
    }
    ClassificationMetrics::from_confusion(confusion_matrix(predictions, truth, n_classes)?)
}

pub fn episode_metrics(predictions: &[usize], truth: &[usize], n_way: usize) -> Result<EpisodeMetrics> {
    Ok(EpisodeMetrics {
        episode_index: 0,
        metrics: classification_metrics(predictions, truth, n_way)?,
    })
}

/// Arithmetic mean and sample (n − 1) standard deviation of a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mean: f64,
    /// `None` when fewer than two inputs were aggregated.
    pub std: Option<f64>,
    pub n: usize,
    pub inputs: Vec<f64>,
}

impl MetricsSummary {
    pub fn std_dev(&self) -> Result<f64> {
        self.std.ok_or(Error::InsufficientSamples(self.n))
    }

    /// True when `mean`/`std` agree with a recomputation from `inputs`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        match aggregate(&self.inputs) {
            Ok(again) => {
                again.n == self.n
                    && (again.mean - self.mean).abs() <= tol
                    && match (again.std, self.std) {
                        (Some(a), Some(b)) => (a - b).abs() <= tol,
                        (None, None) => true,
                        _ => false,
                    }
            }
            Err(_) => false,
        }
    }
}

/// Mean and sample standard deviation. Inputs are summed in sorted order so
/// the result does not depend on their permutation.
pub fn aggregate(values: &[f64]) -> Result<MetricsSummary> {
    if values.is_empty() {
        return Err(Error::Empty("aggregate needs at least one value"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
        dev.sort_by(|a, b| a.total_cmp(b));
        Float::sqrt(dev.iter().sum::<f64>() / (n - 1) as f64)
    });
    Ok(MetricsSummary {
        mean,
        std,
        n,
        inputs: values.to_vec(),
    })
}

/// Raw embeddings for an external projection / plotting step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub dim: usize,
    /// Row-major `M×D`.
    pub vectors: Vec<f32>,
    pub labels: Vec<ClassKey>,
    pub view: View,
    pub config_hash: String,
}

impl EmbeddingDump {
    pub fn new(dim: usize, vectors: Vec<f32>, labels: Vec<ClassKey>, view: View, config_hash: String) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("embedding dump needs at least one row"));
        }
        if vectors.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: vectors.len(),
            });
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i / dim.max(1)));
        }
        Ok(Self {
            dim,
            vectors,
            labels,
            view,
            config_hash,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}
