//! Cross-entropy, masked accuracy and perplexity, with run aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `logits` (`labels.len() x vocab`) whose argmax equals
/// the label.
pub fn correct_predictions<T: Scalar>(logits: &[T], vocab: usize, labels: &[u32]) -> usize {
    logits
        .chunks(vocab)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l as usize)
        .count()
}

/// Fraction of masked positions predicted correctly.
pub fn masked_accuracy<T: Scalar>(logits: &[T], vocab: usize, labels: &[u32]) -> Result<f64> {
    if labels.is_empty() {
        return Err(ModelError::AllIgnored);
    }
    if logits.len() != labels.len() * vocab {
        return Err(ModelError::Invalid(format!(
            "{} logits for {} labels over {vocab} classes",
            logits.len(),
            labels.len()
        )));
    }
    Ok(correct_predictions(logits, vocab, labels) as f64 / labels.len() as f64)
}

pub fn perplexity(ce: f64) -> f64 {
    ce.exp()
}

/// Metrics of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean natural-log cross-entropy per masked token.
    pub ce: f64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub masked: usize,
}

impl Metrics {
    /// Combines summed token losses and correct counts.
    pub fn from_totals(loss_sum: f64, correct: usize, masked: usize) -> Result<Self> {
        if masked == 0 {
            return Err(ModelError::AllIgnored);
        }
        let ce = loss_sum / masked as f64;
        Ok(Self {
            ce,
            accuracy: correct as f64 / masked as f64,
            perplexity: perplexity(ce),
            masked,
        })
    }
}

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run: String,
    pub ce: f64,
    pub accuracy: f64,
    /// `exp(ce)` of this run.
    pub perplexity: f64,
}

/// Per-run metrics plus mean and standard deviation of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    pub mean: RunMetrics,
    pub std: RunMetrics,
}

impl MetricsReport {
    pub fn from_runs(runs: Vec<RunMetrics>) -> Result<Self> {
        if runs.is_empty() {
            return Err(ModelError::Invalid("no runs to aggregate".into()));
        }
        let col = |f: fn(&RunMetrics) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (ce, ce_s) = col(|r| r.ce);
        let (acc, acc_s) = col(|r| r.accuracy);
        let (ppl, ppl_s) = col(|r| r.perplexity);
        Ok(Self {
            mean: RunMetrics {
                run: "mean".into(),
                ce,
                accuracy: acc,
                perplexity: ppl,
            },
            std: RunMetrics {
                run: "std".into(),
                ce: ce_s,
                accuracy: acc_s,
                perplexity: ppl_s,
            },
            runs,
        })
    }

    /// Columns `run, accuracy, perplexity, ce`; one row per run, then the
    /// `mean` and `std` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("run\taccuracy\tperplexity\tce\n");
        for r in self.runs.iter().chain([&self.mean, &self.std]) {
            writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", r.run, r.accuracy, r.perplexity, r.ce).unwrap();
        }
        out
    }
}
