//! Accuracy, AUROC and FPR at a target TPR. Fake is the positive class and
//! higher scores mean "more likely fake".

use crate::error::{check_dim, Error, Result};
use crate::manifold::Label;

pub fn accuracy(decisions: &[Label], labels: &[Label]) -> Result<f64> {
    check_dim(labels.len(), decisions.len())?;
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = decisions.iter().zip(labels).filter(|(d, l)| d == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_scored(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    check_dim(labels.len(), scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "both real and fake samples are required".into(),
        ));
    }
    Ok((pos, neg))
}

/// Mann-Whitney estimate of `P(score_fake > score_real)`, ties counted 1/2,
/// from mid-ranks of the pooled scores.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (pos, neg) = check_scored(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx].is_positive() {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Smallest FPR over thresholds `t` (observed scores plus `+inf`, `-inf`,
/// calling fake when `score >= t`) whose TPR reaches `tpr_target`.
pub fn fpr_at_tpr(scores: &[f64], labels: &[Label], tpr_target: f64) -> Result<f64> {
    let (pos, neg) = check_scored(scores, labels)?;
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(Error::invalid(format!(
            "TPR target {tpr_target} outside [0, 1]"
        )));
    }
    if tpr_target == 0.0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 / pos as f64 >= tpr_target {
            return Ok(fp as f64 / neg as f64);
        }
    }
    // unreachable with tpr_target <= 1: the lowest threshold flags everything
    Ok(1.0)
}

/// Evaluation of one detector on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auroc: f64,
    pub fpr_at_tpr95: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn compute(
        decisions: &[Label],
        scores: &[f64],
        labels: &[Label],
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        check_dim(labels.len(), decisions.len())?;
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (d, l) in decisions.iter().zip(labels) {
            match (d.is_positive(), l.is_positive()) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self {
            accuracy: accuracy(decisions, labels)?,
            auroc: auroc(scores, labels)?,
            fpr_at_tpr95: fpr_at_tpr(scores, labels, 0.95)?,
            tp,
            fp,
            tn,
            fn_,
            config_hash: config_hash.into(),
            seed,
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}
