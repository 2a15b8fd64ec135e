//! Anomaly verdicts from log embeddings: normality scoring, threshold
//! selection on a validation set, and sequence-level aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogEmbedding;

/// Regularizer bounding the score at the hypersphere center, where the raw
/// reciprocal is singular.
pub const SCORE_EPS: f64 = 1e-12;

/// Performance criterion maximized during threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    F1,
    Precision,
    Recall,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Criterion::F1),
            "precision" => Ok(Criterion::Precision),
            "recall" => Ok(Criterion::Recall),
            other => Err(Error::invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Score cutoff: scores strictly below `a_tilde` are anomalous.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecisionThreshold {
    pub a_tilde: f64,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionResult {
    pub score: f64,
    pub verdict: Verdict,
}

/// Normality score: reciprocal squared distance to the hypersphere center
/// (the origin), epsilon-regularized. Large for normal logs, small for
/// anomalous ones.
pub fn normality_score(x: &LogEmbedding) -> f64 {
    score_from_sq_norm(x.sq_norm())
}

pub fn score_from_sq_norm(sq_norm: f64) -> f64 {
    1.0 / (sq_norm + SCORE_EPS)
}

fn criterion_value(criterion: Criterion, tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    match criterion {
        Criterion::Precision => precision,
        Criterion::Recall => recall,
        Criterion::F1 => {
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        }
    }
}

/// Picks the decision threshold maximizing `criterion` on a validation set.
///
/// Labels are 1 for the abnormal/anomalous class. Candidates are the
/// midpoints between consecutive distinct sorted scores plus two sentinels:
/// half the minimum (predicting all-normal) and twice the maximum
/// (predicting all-anomalous). Ties go to the smallest candidate, i.e. the
/// fewest reported anomalies among the optima.
pub fn select_threshold(
    scores: &[f64],
    labels: &[u8],
    criterion: Criterion,
) -> Result<DecisionThreshold> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid("threshold selection needs both classes present"));
    }

    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // prefix_pos[k] = positives among the k lowest-scoring items; a threshold
    // admitting exactly those k items as anomalous has tp = prefix_pos[k]
    let n = pairs.len();
    let mut prefix_pos = vec![0usize; n + 1];
    for (i, &(_, label)) in pairs.iter().enumerate() {
        prefix_pos[i + 1] = prefix_pos[i] + usize::from(label == 1);
    }

    let mut candidates: Vec<(f64, usize)> = Vec::new();
    candidates.push((pairs[0].0 * 0.5, 0));
    for i in 1..n {
        if pairs[i].0 > pairs[i - 1].0 {
            candidates.push((pairs[i - 1].0 + (pairs[i].0 - pairs[i - 1].0) / 2.0, i));
        }
    }
    candidates.push((pairs[n - 1].0 * 2.0, n));

    let mut best = None;
    for &(threshold, k) in &candidates {
        let tp = prefix_pos[k];
        let fp = k - tp;
        let fn_ = positives - tp;
        let value = criterion_value(criterion, tp, fp, fn_);
        match best {
            None => best = Some((threshold, value)),
            Some((_, best_value)) if value > best_value => best = Some((threshold, value)),
            _ => {}
        }
    }
    let (a_tilde, _) = best.expect("at least two candidates");
    Ok(DecisionThreshold { a_tilde, criterion })
}

/// Applies the decision rule to one embedding.
pub fn detect(x: &LogEmbedding, threshold: &DecisionThreshold) -> DetectionResult {
    let score = normality_score(x);
    detect_score(score, threshold)
}

pub fn detect_score(score: f64, threshold: &DecisionThreshold) -> DetectionResult {
    let verdict = if score < threshold.a_tilde {
        Verdict::Anomalous
    } else {
        Verdict::Normal
    };
    DetectionResult { score, verdict }
}

/// A sequence is anomalous iff any member log is.
pub fn aggregate_sequence(verdicts: &[Verdict]) -> Result<Verdict> {
    if verdicts.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty sequence"));
    }
    Ok(if verdicts.contains(&Verdict::Anomalous) {
        Verdict::Anomalous
    } else {
        Verdict::Normal
    })
}
