//! End-to-end training run: data, ablation, epochs, per-epoch evaluation and
//! checkpoints, CSV logs. Every output is a pure function of the config.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.txt            resolved configuration
//! metrics.csv           one row per optimizer update
//! eval.csv              per-epoch validation scores
//! checkpoints/epoch-E.ckpt
//! best.txt              checkpoint with the best validation macro-average
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dhrd_core::datagen::Split;
use dhrd_core::metrics::{self, TaskScore};
use dhrd_core::model::DualHeadModel;
use dhrd_core::optim::Trainer;
use dhrd_core::sequences::{apply_ablation, build_sequence_with, AblationSetting, Example, LabelSet, SequenceOptions, TrainSequence};
use dhrd_core::train;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, Record};
use crate::error::{Error, Result};
use crate::eval;

pub const METRICS_HEADER: &str = "step,epoch,lr,loss_cls,loss_reason,loss_total,N";
pub const EVAL_HEADER: &str = "epoch,task,metric,value";

/// Label set of a dataset: Yes/No when that covers every label, otherwise
/// the sorted distinct labels.
pub fn label_set(records: &[Record]) -> Result<LabelSet> {
    let yes_no = LabelSet::yes_no();
    if records.iter().all(|r| yes_no.index_of(&r.label).is_some()) {
        return Ok(yes_no);
    }
    let mut labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
    labels.sort();
    labels.dedup();
    Ok(LabelSet::new(labels)?)
}

/// Training and validation records, from files when configured, otherwise
/// generated in memory.
pub fn load_splits(cfg: &RunConfig) -> Result<(Vec<Record>, Vec<Record>)> {
    let spec = cfg.data.task_spec();
    let train = match &cfg.data.train {
        Some(p) => dataset::read_dataset(p)?,
        None => dataset::generate(&spec, Split::Train)?,
    };
    let val = match &cfg.data.val {
        Some(p) => dataset::read_dataset(p)?,
        None => dataset::generate(&spec, Split::Val)?,
    };
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((train, val))
}

/// Ablated training examples and their sequences.
pub fn prepare_training(cfg: &RunConfig, train: &[Example]) -> Result<(Vec<Example>, Vec<TrainSequence>)> {
    let ablated = apply_ablation(train, AblationSetting { kind: cfg.ablation, seed: cfg.seed })?;
    let opts = SequenceOptions { lm_covers_label: cfg.data.lm_covers_label, ..SequenceOptions::default() };
    let seqs = ablated.iter().map(|e| build_sequence_with(e, &opts)).collect::<dhrd_core::Result<Vec<_>>>()?;
    if let Some(s) = seqs.iter().find(|s| s.len() > cfg.model.max_len) {
        return Err(dhrd_core::Error::SequenceTooLong { len: s.len(), max_len: cfg.model.max_len }.into());
    }
    Ok((ablated, seqs))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DualHeadModel<f32>,
    pub config: RunConfig,
    pub labels: LabelSet,
    /// `(epoch, scores)` for every evaluated epoch.
    pub history: Vec<(usize, Vec<TaskScore>)>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
}

impl TrainOutcome {
    pub fn final_macro(&self) -> Option<f64> {
        self.history.last().and_then(|(_, s)| metrics::macro_average(s).ok())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn eval_rows(epoch: usize, scores: &[TaskScore]) -> Result<String> {
    let mut s = String::new();
    for t in scores {
        for (m, v) in &t.metrics {
            let _ = writeln!(s, "{},{},{},{}", epoch, t.task_id, m, v);
        }
    }
    let _ = writeln!(s, "{},all,macro_avg,{}", epoch, metrics::macro_average(scores)?);
    Ok(s)
}

pub fn run_training(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let (train_recs, val_recs) = load_splits(&cfg)?;
    let labels = label_set(&train_recs)?;
    cfg.model.num_classes = labels.len();
    let train_ex = dataset::to_examples(&train_recs, &labels)?;
    let val_ex = dataset::to_examples(&val_recs, &labels)?;
    let (_, seqs) = prepare_training(&cfg, &train_ex)?;
    if cfg.optim.total_steps == 0 {
        cfg.optim.total_steps = train::total_steps(seqs.len(), &cfg.optim);
    }
    // short runs: the warmup cannot outlast the run
    cfg.optim.warmup_steps = cfg.optim.warmup_steps.min(cfg.optim.total_steps);
    cfg.optim.validate()?;

    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let metrics_path = out.join("metrics.csv");
    let eval_path = out.join("eval.csv");
    write(&metrics_path, &format!("{}\n", METRICS_HEADER))?;
    write(&eval_path, &format!("{}\n", EVAL_HEADER))?;

    let mut model = DualHeadModel::<f32>::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(&model, cfg.optim.clone())?;
    let ckpt = |e: usize| ckpt_dir.join(format!("epoch-{}.ckpt", e));
    checkpoint::save(&model, &ckpt(0))?;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    if cfg.optim.epochs == 0 && !val_ex.is_empty() {
        let scores = eval::evaluate(&model, &val_ex, &labels, cfg.eval_batch)?;
        append(&eval_path, &eval_rows(0, &scores)?)?;
        best = Some((0, metrics::macro_average(&scores)?));
        history.push((0, scores));
    }
    for epoch in 1..=cfg.optim.epochs {
        let mut rows = String::new();
        train::train_epoch(&mut model, &mut trainer, &seqs, epoch - 1, cfg.loss, |r| {
            let l = &r.losses;
            let _ = writeln!(rows, "{},{},{},{},{},{},{}", r.step, epoch, r.lr, l.loss_cls, l.loss_reason, l.loss_total, l.n_targets);
        })?;
        append(&metrics_path, &rows)?;
        checkpoint::save(&model, &ckpt(epoch))?;
        if !val_ex.is_empty() {
            let scores = eval::evaluate(&model, &val_ex, &labels, cfg.eval_batch)?;
            append(&eval_path, &eval_rows(epoch, &scores)?)?;
            let m = metrics::macro_average(&scores)?;
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((epoch, m));
            }
            history.push((epoch, scores));
        }
    }
    let (best_epoch, best_value) = match best {
        Some(b) => b,
        None => (cfg.optim.epochs, f64::NAN),
    };
    let rel = format!("checkpoints/epoch-{}.ckpt", best_epoch);
    write(&out.join("best.txt"), &format!("checkpoint={}\nepoch={}\nmacro_avg={}\n", rel, best_epoch, best_value))?;
    Ok(TrainOutcome { model, config: cfg, labels, history, best_epoch, best_checkpoint: out.join(rel) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_set_prefers_yes_no() {
        let r = |l: &str| Record {
            id: String::new(),
            input: "x".into(),
            reasoning: String::new(),
            label: l.into(),
            group_id: None,
            task_id: "t".into(),
        };
        assert_eq!(label_set(&[r("Yes"), r("No")]).unwrap(), LabelSet::yes_no());
        let l = label_set(&[r("b"), r("a"), r("b")]).unwrap();
        assert_eq!(l.labels(), &["a".to_string(), "b".to_string()]);
    }
}
