//! Binary classification metrics from positive-class scores.

use ht_core::error::{Error, Result};

/// Confusion-matrix metrics (percent) plus rank-based AUC with ties
/// credited one half. `precision_flagged` / `auc_flagged` mark conventions:
/// undefined precision is reported as 0, single-class AUC as 50.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsReport {
    pub acc: f64,
    pub rec: f64,
    pub pre: f64,
    pub f1: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fne: usize,
    pub precision_flagged: bool,
    pub auc_flagged: bool,
}

impl ClsReport {
    /// Rows of (metric, value).
    pub fn summary(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("acc", self.acc),
            ("rec", self.rec),
            ("pre", self.pre),
            ("f1", self.f1),
            ("auc", self.auc),
        ]
    }
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j + 2) as f64 / 2.0; // 1-based
        for k in i..=j {
            ranks[idx[k]] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Metrics at threshold 0.5 plus AUC. `labels` must be 0/1.
pub fn cls_metrics(scores: &[f64], labels: &[usize]) -> Result<ClsReport> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "need equal nonzero score/label counts, got {}/{}",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::Input("labels must be 0 or 1".to_string()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".to_string()));
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        let pred = *s >= 0.5;
        match (pred, *l) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 0) => tn += 1,
            (false, 1) => fne += 1,
            _ => unreachable!(),
        }
    }
    let n = scores.len() as f64;
    let acc = 100.0 * (tp + tn) as f64 / n;
    let rec = if tp + fne > 0 {
        100.0 * tp as f64 / (tp + fne) as f64
    } else {
        0.0
    };
    let precision_flagged = tp + fp == 0;
    let pre = if precision_flagged {
        0.0
    } else {
        100.0 * tp as f64 / (tp + fp) as f64
    };
    let f1 = if pre + rec > 0.0 {
        2.0 * pre * rec / (pre + rec)
    } else {
        0.0
    };

    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    let (auc, auc_flagged) = if n_pos == 0 || n_neg == 0 {
        (50.0, true)
    } else {
        let ranks = average_ranks(scores);
        let pos_rank_sum: f64 = ranks
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == 1)
            .map(|(r, _)| r)
            .sum();
        let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
        (100.0 * u / (n_pos as f64 * n_neg as f64), false)
    };

    Ok(ClsReport {
        acc,
        rec,
        pre,
        f1,
        auc,
        tp,
        fp,
        tn,
        fne,
        precision_flagged,
        auc_flagged,
    })
}
