//! Threshold-free binary classification metrics and run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with 0/1 labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::UndefinedMetric("no samples".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores contain NaN"));
        }
        Ok(Self { scores, labels })
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Groups of sample indices sharing a score, highest score first.
    fn descending_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            let (mut pos, mut neg) = (0, 0);
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                i += 1;
            }
            groups.push((pos, neg));
        }
        groups
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn roc_auc(s: ScoredLabels<'_>) -> Result<f64> {
    let p = s.positives();
    let n = s.labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both classes present".into(),
        ));
    }
    // Walk groups from the top; each positive beats every negative seen below it.
    let mut negatives_above = 0usize;
    let mut twice_wins = 0u128;
    for (pos, neg) in s.descending_groups() {
        let below = n - negatives_above - neg;
        twice_wins += (pos * (2 * below + neg)) as u128;
        negatives_above += neg;
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

/// Average precision: Σ over distinct thresholds of recall increment times
/// precision, with equal scores forming a single threshold. No interpolation.
pub fn pr_auc(s: ScoredLabels<'_>) -> Result<f64> {
    let p = s.positives();
    if p == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (pos, neg) in s.descending_groups() {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += (pos as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Mean and standard error (sample standard deviation over √n).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("mean_stderr of an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
}

/// Per-run AUCs plus mean ± standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roc_auc: Vec<f64>,
    pub pr_auc: Vec<f64>,
    pub roc_auc_summary: Summary,
    pub pr_auc_summary: Summary,
    pub runs: usize,
}

impl MetricsReport {
    pub fn from_runs(roc: Vec<f64>, pr: Vec<f64>) -> Result<Self> {
        if roc.len() != pr.len() {
            return Err(Error::invalid("ROC and PR run counts differ"));
        }
        let (rm, rs) = mean_stderr(&roc)?;
        let (pm, ps) = mean_stderr(&pr)?;
        Ok(Self {
            runs: roc.len(),
            roc_auc: roc,
            pr_auc: pr,
            roc_auc_summary: Summary { mean: rm, stderr: rs },
            pr_auc_summary: Summary { mean: pm, stderr: ps },
        })
    }
}
