use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-fold metrics with class 1 as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub acc: f64,
    pub auc: f64,
    pub spe: f64,
    pub sen: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// ACC/SPE/SEN at a 0.5 threshold (score ≥ 0.5 predicts class 1) and
/// Mann–Whitney AUC with ties counted half.
pub fn compute_metrics(scores: &[f64], labels: &[usize]) -> Result<FoldMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("test fold contains a single class".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(FoldMetrics {
        acc: (tp + tn) as f64 / labels.len() as f64,
        auc: rank_auc(scores, labels, n_pos, n_neg),
        spe: tn as f64 / n_neg as f64,
        sen: tp as f64 / n_pos as f64,
        tp,
        tn,
        fp,
        fn_,
    })
}

/// `(Σ ranks of positives − n₊(n₊+1)/2) / (n₊ n₋)` with average ranks.
fn rank_auc(scores: &[f64], labels: &[usize], n_pos: usize, n_neg: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repetition: usize,
    pub fold: usize,
    pub metrics: FoldMetrics,
}

/// Mean ± std over every repetition × fold record, plus the raw records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: MeanStd,
    pub auc: MeanStd,
    pub spe: MeanStd,
    pub sen: MeanStd,
    pub folds: Vec<FoldRecord>,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldRecord>) -> MetricsReport {
        let col = |f: fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        MetricsReport {
            acc: col(|m| m.acc),
            auc: col(|m| m.auc),
            spe: col(|m| m.spe),
            sen: col(|m| m.sen),
            folds,
        }
    }
}
