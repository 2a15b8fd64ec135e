//! Evaluation harness: dataset adapters, chronological splitting, sequence
//! grouping, and detection metrics.

pub mod adapters;
pub mod experiments;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One target-system log with evaluation metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledLog {
    /// Seconds; adapters keep logs time-ordered.
    pub timestamp: i64,
    /// Message content only, headers already stripped by the adapter.
    pub message: String,
    /// Ground truth, present only in evaluation datasets.
    pub label: Option<bool>,
    pub group_key: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// First `floor(train_frac * N)` logs for training, the rest for testing.
/// No shuffling; the input is expected chronological.
pub fn chronological_split(
    logs: &[LabeledLog],
    train_frac: f64,
) -> Result<(&[LabeledLog], &[LabeledLog])> {
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1)"));
    }
    let cut = (train_frac * logs.len() as f64).floor() as usize;
    if cut == 0 || cut == logs.len() {
        return Err(Error::invalid("chronological split leaves an empty side"));
    }
    Ok(logs.split_at(cut))
}

/// Groups log positions by their group key, order preserved within a group.
pub fn group_by_key(logs: &[LabeledLog]) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, log) in logs.iter().enumerate() {
        let key = log
            .group_key
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("log at position {i} has no group key")))?;
        groups.entry(key.clone()).or_default().push(i);
    }
    Ok(groups)
}

/// Fixed non-overlapping windows anchored at the first timestamp: window k
/// covers `[t0 + k*T, t0 + (k+1)*T)`. Empty windows are omitted.
pub fn group_by_time_window(logs: &[LabeledLog], window_seconds: i64) -> Vec<Vec<usize>> {
    assert!(window_seconds > 0, "window size must be positive");
    if logs.is_empty() {
        return Vec::new();
    }
    let t0 = logs[0].timestamp;
    let mut windows: Vec<Vec<usize>> = Vec::new();
    let mut current_window = 0i64;
    let mut current: Vec<usize> = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        let w = (log.timestamp - t0).div_euclid(window_seconds);
        if w != current_window && !current.is_empty() {
            windows.push(std::mem::take(&mut current));
        }
        current_window = w;
        current.push(i);
    }
    if !current.is_empty() {
        windows.push(current);
    }
    windows
}

/// Sequence truth: a group is anomalous iff any member log is.
pub fn sequence_labels(groups: &[Vec<usize>], truth: &[bool]) -> Vec<bool> {
    groups
        .iter()
        .map(|members| members.iter().any(|&i| truth[i]))
        .collect()
}

/// Confusion counts and derived rates; positives are anomalies.
pub fn compute_metrics(predictions: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid("predictions and truth differ in length"));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport { precision, recall, f1, tp, fp, fn_, tn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log(ts: i64, label: bool, key: Option<&str>) -> LabeledLog {
        LabeledLog {
            timestamp: ts,
            message: format!("event at {ts}"),
            label: Some(label),
            group_key: key.map(|k| k.to_string()),
        }
    }

    #[test]
    fn split_uses_the_floor_rule() {
        let logs: Vec<LabeledLog> = (0..10).map(|i| log(i, false, None)).collect();
        let (train, test) = chronological_split(&logs, 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));

        let logs5: Vec<LabeledLog> = (0..5).map(|i| log(i, false, None)).collect();
        let (train, test) = chronological_split(&logs5, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (2, 3));
        assert_eq!(train[0].timestamp, 0);
        assert_eq!(test[0].timestamp, 2);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let logs: Vec<LabeledLog> = (0..2).map(|i| log(i, false, None)).collect();
        assert!(chronological_split(&logs, 0.1).is_err());
        assert!(chronological_split(&[], 0.5).is_err());
    }

    #[test]
    fn grouping_by_key_preserves_order() {
        let logs = vec![log(0, false, Some("A")), log(1, false, Some("B")), log(2, false, Some("A"))];
        let groups = group_by_key(&logs).unwrap();
        assert_eq!(groups["A"], vec![0, 2]);
        assert_eq!(groups["B"], vec![1]);
        assert!(group_by_key(&[]).unwrap().is_empty());
        assert!(group_by_key(&[log(0, false, None)]).is_err());
    }

    #[test]
    fn window_grouping_follows_the_anchor() {
        let logs = vec![log(0, false, None), log(100, false, None), log(21601, false, None)];
        let windows = group_by_time_window(&logs, 21600);
        assert_eq!(windows, vec![vec![0, 1], vec![2]]);

        let one = group_by_time_window(&logs[..2], 21600);
        assert_eq!(one, vec![vec![0, 1]]);
    }

    #[test]
    fn window_grouping_partitions() {
        let logs: Vec<LabeledLog> = (0..100).map(|i| log(i * 137, false, None)).collect();
        let windows = group_by_time_window(&logs, 900);
        let mut seen = vec![false; logs.len()];
        for w in &windows {
            for &i in w {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // window count bounded by ceil(span / T)
        let span = logs.last().unwrap().timestamp - logs[0].timestamp;
        assert!(windows.len() as i64 <= span / 900 + 1);
    }

    #[test]
    fn sequence_labels_are_or_folds() {
        let truth = vec![false, false, true, false];
        assert_eq!(sequence_labels(&[vec![0, 1, 2]], &truth), vec![true]);
        assert_eq!(sequence_labels(&[vec![0, 1]], &truth), vec![false]);
    }

    #[test]
    fn metrics_match_hand_counts() {
        let report = compute_metrics(&[true, true, false], &[true, false, false]).unwrap();
        assert_eq!(report.precision, 0.5);
        assert_eq!(report.recall, 1.0);
        assert!((report.f1 - 2.0 / 3.0).abs() < 1e-12);

        let perfect = compute_metrics(&[true, false], &[true, false]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));

        assert!(compute_metrics(&[true], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_stay_bounded_and_consistent(
            pred in proptest::collection::vec(proptest::bool::ANY, 1..200),
        ) {
            let truth: Vec<bool> = pred.iter().enumerate().map(|(i, &p)| p ^ (i % 3 == 0)).collect();
            let report = compute_metrics(&pred, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&report.precision));
            prop_assert!((0.0..=1.0).contains(&report.recall));
            prop_assert!((0.0..=1.0).contains(&report.f1));
            prop_assert_eq!(report.tp + report.fp + report.fn_ + report.tn, pred.len());
            if report.precision > 0.0 && report.recall > 0.0 {
                prop_assert!(report.f1 <= report.precision.max(report.recall) + 1e-12);
                prop_assert!(report.f1 >= report.precision.min(report.recall) - 1e-12);
            }
        }
    }
}
