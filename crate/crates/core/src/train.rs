//! Epoch loop over prepared sequences: per-epoch shuffling, length-sorted
//! micro-batches within each update, and validation scoring.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics;
use crate::model::DualHeadModel;
use crate::optim::{OptimConfig, StepReport, Trainer};
use crate::real::Real;
use crate::rng::{self, Purpose};
use crate::sequences::{collate, Batch, Example, TrainSequence};
use crate::tokenizer::PAD;

/// Updates needed for `epochs` passes over `n_train` examples.
pub fn total_steps(n_train: usize, cfg: &OptimConfig) -> usize {
    cfg.epochs * cfg.steps_per_epoch(n_train)
}

/// Visiting order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::mix(seed, epoch as u64), Purpose::Shuffle));
    order
}

/// Micro-batches for one update. Members are sorted by length first so that
/// padding inside each micro-batch stays small.
pub fn update_batches(seqs: &[TrainSequence], members: &[usize], micro_batch: usize) -> Result<Vec<Batch>> {
    if members.is_empty() || micro_batch == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut members = members.to_vec();
    members.sort_by_key(|&i| (seqs[i].len(), i));
    members
        .chunks(micro_batch)
        .map(|c| {
            let group: Vec<TrainSequence> = c.iter().map(|&i| seqs[i].clone()).collect();
            collate(&group, PAD)
        })
        .collect()
}

/// One pass over `seqs`, calling `on_step` after every update.
pub fn train_epoch<F: Real>(
    model: &mut DualHeadModel<F>,
    trainer: &mut Trainer<F>,
    seqs: &[TrainSequence],
    epoch: usize,
    w: LossWeights,
    mut on_step: impl FnMut(&StepReport),
) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let order = epoch_order(seqs.len(), trainer.cfg.seed, epoch);
    let per_update = trainer.cfg.effective_batch();
    for members in order.chunks(per_update) {
        let batches = update_batches(seqs, members, trainer.cfg.micro_batch)?;
        let report = trainer.train_step(model, &batches, w)?;
        on_step(&report);
    }
    Ok(())
}

/// Classification accuracy (0–100) of the pooled head on inputs only.
pub fn accuracy<F: Real>(model: &DualHeadModel<F>, examples: &[Example], batch_size: usize) -> Result<f64> {
    let preds = model.predict(examples, batch_size)?;
    let golds: Vec<usize> = examples.iter().map(|e| e.label_index).collect();
    metrics::accuracy(&preds, &golds)
}
