//! Per-task scoring of the pooled head, the generate-then-parse baseline,
//! and the score CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dhrd_core::metrics::{self, TaskScore};
use dhrd_core::model::DualHeadModel;
use dhrd_core::rng::{self, Purpose};
use dhrd_core::sampling::{self, DecodeSettings};
use dhrd_core::sequences::{inference_input, Example, LabelSet};

use crate::error::{Error, Result};

/// Tasks whose records carry group ids are scored as F1 / EM (paired);
/// the rest by accuracy.
pub fn score_predictions(examples: &[Example], preds: &[usize], labels: &LabelSet) -> Result<Vec<TaskScore>> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let positive = labels.index_of("Yes").unwrap_or(1);
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_task.entry(e.task_id.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (task, idx) in by_task {
        let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let g: Vec<usize> = idx.iter().map(|&i| examples[i].label_index).collect();
        let groups: Option<Vec<u64>> = idx.iter().map(|&i| examples[i].group_id).collect();
        out.push(match groups {
            Some(groups) => TaskScore::paired(
                task,
                ("f1", metrics::f1_binary(&p, &g, positive)?),
                ("em", metrics::exact_match_groups(&p, &g, &groups)?),
            ),
            None => TaskScore::single(task, "accuracy", metrics::accuracy(&p, &g)?),
        });
    }
    Ok(out)
}

pub fn evaluate(model: &DualHeadModel<f32>, examples: &[Example], labels: &LabelSet, batch: usize) -> Result<Vec<TaskScore>> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = model.predict(examples, batch)?;
    score_predictions(examples, &preds, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotOutcome {
    pub scores: Vec<TaskScore>,
    /// Generations with no label after the answer marker; counted as wrong.
    pub unparseable: usize,
}

/// Generate-then-parse baseline: the LM head continues each input and the
/// label is read after the answer marker.
pub fn evaluate_cot(
    model: &DualHeadModel<f32>,
    examples: &[Example],
    labels: &LabelSet,
    settings: &DecodeSettings,
    seed: u64,
) -> Result<CotOutcome> {
    let mut rng = rng::stream(seed, Purpose::Sampling);
    let mut preds = Vec::with_capacity(examples.len());
    let mut unparseable = 0;
    for e in examples {
        let (x, _) = inference_input(e);
        let generated = model.generate(&x, settings, &mut rng)?;
        match sampling::extract_label(&generated, labels) {
            Some(l) => preds.push(l),
            None => {
                unparseable += 1;
                // never equal to a gold label
                preds.push(usize::MAX);
            }
        }
    }
    Ok(CotOutcome { scores: score_predictions(examples, &preds, labels)?, unparseable })
}

pub fn scores_csv(scores: &[TaskScore]) -> Result<String> {
    let mut s = String::from("task,metric,value\n");
    for t in scores {
        for (m, v) in &t.metrics {
            let _ = writeln!(s, "{},{},{:.4}", t.task_id, m, v);
        }
    }
    let _ = writeln!(s, "macro_avg,macro_avg,{:.4}", metrics::macro_average(scores)?);
    Ok(s)
}

pub fn write_scores(path: &Path, scores: &[TaskScore]) -> Result<()> {
    std::fs::write(path, scores_csv(scores)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(task: &str, label: usize, group: Option<u64>) -> Example {
        Example { x_tokens: vec![1], r_tokens: vec![], label_index: label, label_tokens: vec![2], group_id: group, task_id: task.into() }
    }

    #[test]
    fn tasks_are_scored_separately() {
        let labels = LabelSet::yes_no();
        let exs = vec![ex("a", 1, None), ex("a", 0, None), ex("b", 1, Some(1)), ex("b", 1, Some(1)), ex("b", 0, Some(2))];
        let preds = vec![1, 1, 1, 0, 0];
        let s = score_predictions(&exs, &preds, &labels).unwrap();
        assert_eq!(s[0], TaskScore::single("a", "accuracy", 50.0));
        assert_eq!(s[1].metrics[1], ("em".to_string(), 50.0));
        let csv = scores_csv(&s).unwrap();
        assert!(csv.starts_with("task,metric,value\na,accuracy,50.0000\n"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("macro_avg,"));
    }
}
