//! Task metrics on a 0–100 scale and the cross-task macro-average.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

/// Binary F1 of `positive` against the rest; 0 when precision + recall is 0.
pub fn f1_binary(preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Percentage of groups whose records are all predicted correctly.
pub fn exact_match_groups(preds: &[usize], golds: &[usize], group_ids: &[u64]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    same_len(preds.len(), group_ids.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<u64, bool> = BTreeMap::new();
    for ((&p, &g), &id) in preds.iter().zip(golds).zip(group_ids) {
        let ok = groups.entry(id).or_insert(true);
        *ok &= p == g;
    }
    let all = groups.values().filter(|&&ok| ok).count();
    Ok(100.0 * all as f64 / groups.len() as f64)
}

/// Scores of one task. Paired-metric tasks (F1/accuracy, F1a/EM) carry two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub task_id: String,
    pub metrics: Vec<(String, f64)>,
}

impl TaskScore {
    pub fn single(task_id: impl Into<String>, name: impl Into<String>, value: f64) -> Self {
        TaskScore { task_id: task_id.into(), metrics: alloc::vec![(name.into(), value)] }
    }

    pub fn paired(task_id: impl Into<String>, a: (&str, f64), b: (&str, f64)) -> Self {
        TaskScore { task_id: task_id.into(), metrics: alloc::vec![(a.0.into(), a.1), (b.0.into(), b.1)] }
    }

    pub fn mean(&self) -> f64 {
        self.metrics.iter().map(|(_, v)| v).sum::<f64>() / self.metrics.len() as f64
    }
}

/// Mean over tasks of each task's mean metric.
pub fn macro_average(scores: &[TaskScore]) -> Result<f64> {
    if scores.is_empty() || scores.iter().any(|s| s.metrics.is_empty()) {
        return Err(Error::EmptyInput);
    }
    Ok(scores.iter().map(TaskScore::mean).sum::<f64>() / scores.len() as f64)
}

/// Relative change in percent, `100 · (value − baseline) / baseline`.
pub fn relative_delta(value: f64, baseline: f64) -> f64 {
    100.0 * (value - baseline) / baseline
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 100.0);
        assert_eq!(accuracy(&[0, 1, 1], &[1, 0, 0]).unwrap(), 0.0);
        let golds = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let preds = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(accuracy(&preds, &golds).unwrap(), 70.0);
        assert_eq!(accuracy(&[], &[]), Err(Error::EmptyInput));
        assert_eq!(accuracy(&[1], &[1, 0]), Err(Error::LengthMismatch { left: 1, right: 2 }));
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 100.0);
        assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 1], 1).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let f1 = f1_binary(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 1).unwrap();
        assert!((f1 - 200.0 / 3.0).abs() < 1e-12);
        assert!(f1_binary(&[1], &[], 1).is_err());
    }

    #[test]
    fn exact_match_cases() {
        assert_eq!(exact_match_groups(&[1, 0], &[1, 0], &[7, 7]).unwrap(), 100.0);
        assert_eq!(exact_match_groups(&[1, 0, 1, 1], &[1, 0, 1, 0], &[1, 1, 2, 2]).unwrap(), 50.0);
        let preds = [1, 0, 0, 1, 1];
        let golds = [1, 1, 0, 1, 0];
        let singletons = [0, 1, 2, 3, 4];
        assert_eq!(exact_match_groups(&preds, &golds, &singletons).unwrap(), accuracy(&preds, &golds).unwrap());
    }

    #[test]
    fn macro_average_cases() {
        assert_eq!(macro_average(&[TaskScore::single("t", "acc", 42.5)]).unwrap(), 42.5);
        let all: Vec<_> = (0..7).map(|i| TaskScore::single(alloc::format!("t{}", i), "acc", 100.0)).collect();
        assert_eq!(macro_average(&all).unwrap(), 100.0);
        assert_eq!(macro_average(&[]), Err(Error::EmptyInput));
        assert!((relative_delta(87.52, 85.99) - 1.779).abs() < 1e-3);
    }
}
