//! AdamW with decoupled weight decay, linear-warmup cosine schedule, and the
//! gradient-accumulating train step for the joint objective.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::losses::{self, LossReport, LossWeights};
use crate::model::DualHeadModel;
use crate::real::Real;
use crate::sequences::Batch;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    /// Number of optimizer updates in the whole run.
    pub total_steps: usize,
    pub grad_accum: usize,
    pub micro_batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 2e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 5,
            total_steps: 0,
            grad_accum: 8,
            micro_batch: 4,
            epochs: 3,
            seed: 0,
        }
    }
}

impl OptimConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |key, reason: alloc::string::String| Err(Error::Config { key, reason });
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("optim.lr", format!("must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("optim.weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optim.beta1", "betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("optim.eps", "must be > 0".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad("optim.warmup_steps", format!("{} exceeds total steps {}", self.warmup_steps, self.total_steps));
        }
        if self.grad_accum == 0 {
            return bad("optim.grad_accum", "must be >= 1".into());
        }
        if self.micro_batch == 0 {
            return bad("optim.micro_batch", "must be >= 1".into());
        }
        Ok(())
    }

    /// Examples consumed per optimizer update.
    pub fn effective_batch(&self) -> usize {
        self.grad_accum * self.micro_batch
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.effective_batch())
    }
}

/// Linear ramp `0 → lr` over the warmup, then half-cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &OptimConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange { step, total: cfg.total_steps });
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.lr * step as f64 / cfg.warmup_steps as f64);
    }
    if cfg.total_steps == cfg.warmup_steps {
        return Ok(cfg.lr);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.lr * 0.5 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * progress)))
}

/// First and second moments per parameter, plus the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<F: Real> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: usize,
}

impl<F: Real> OptimState<F> {
    pub fn new(model: &DualHeadModel<F>) -> Self {
        let zeros = || model.params().iter().map(|p| alloc::vec![F::zero(); p.tensor.numel()]).collect();
        OptimState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// AdamW on one flat parameter buffer. `t` is the 1-based update count;
/// decay multiplies by `1 - lr * weight_decay` before the Adam step.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<F: Real>(
    data: &mut [F],
    grad: Option<&[F]>,
    m: &mut [F],
    v: &mut [F],
    t: usize,
    cfg: &OptimConfig,
    lr: f64,
    decay: bool,
) {
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let one = F::one();
    let t = t as i32;
    let bc1 = one - b1.powi(t);
    let bc2_sqrt = (one - b2.powi(t)).sqrt();
    let step_size = F::from_f64_lossy(lr) / bc1;
    let eps = F::from_f64_lossy(cfg.eps);
    let shrink = one - F::from_f64_lossy(lr * cfg.weight_decay);
    let apply_decay = decay && cfg.weight_decay != 0.0;
    for i in 0..data.len() {
        let g = grad.map_or(F::zero(), |g| g[i]);
        if apply_decay {
            data[i] *= shrink;
        }
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let denom = v[i].sqrt() / bc2_sqrt + eps;
        data[i] -= step_size * m[i] / denom;
    }
}

/// One AdamW update from the gradients stored on the parameters (absent
/// gradients count as zero); biases and norm parameters are not decayed.
pub fn adamw_update<F: Real>(model: &mut DualHeadModel<F>, state: &mut OptimState<F>, cfg: &OptimConfig, lr: f64) {
    state.step += 1;
    for ((p, m), v) in model.params_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad().map(<[F]>::to_vec);
        let decay = p.decay;
        adamw_step(p.tensor.data_mut(), grad.as_deref(), m, v, state.step, cfg, lr, decay);
    }
}

/// Forward over the full stream, both losses, backward of `scale * L_total`;
/// gradients are added into the model parameters.
pub fn accumulate_micro_batch<F: Real>(model: &mut DualHeadModel<F>, batch: &Batch, w: LossWeights, scale: f64) -> Result<LossReport> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let hidden = model.forward_hidden(&mut tape, &bound, &batch.full_tokens, &batch.full_pad_mask, batch.size, batch.full_len)?;
    let z = model.classify(&mut tape, &bound, hidden, &batch.pool_indices)?;
    let l_cls = losses::cls_loss(&mut tape, z, &batch.label_indices)?;
    // unscored positions carry zero weight, so only scored rows are projected
    let rows: Vec<usize> = (0..batch.lm_mask.len()).filter(|&i| batch.lm_mask[i] != 0).collect();
    let targets: Vec<_> = rows.iter().map(|&i| batch.lm_targets[i]).collect();
    let logits = model.lm_logits_at(&mut tape, &bound, hidden, &rows)?;
    let (l_reason, n) = losses::reason_loss(&mut tape, logits, &targets, &alloc::vec![1; rows.len()])?;
    let l_total = losses::total_loss(&mut tape, l_cls, l_reason, w)?;
    let report = LossReport {
        loss_cls: tape.scalar_value(l_cls)?.as_f64(),
        loss_reason: tape.scalar_value(l_reason)?.as_f64(),
        loss_total: tape.scalar_value(l_total)?.as_f64(),
        n_targets: n,
    };
    let scaled = tape.scale(l_total, F::from_f64_lossy(scale))?;
    tape.backward(scaled)?;
    model.accumulate_grads(&tape, &bound)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Micro-batch mean of each loss; `n_targets` is summed.
    pub losses: LossReport,
    pub lr: f64,
    /// Updates taken so far, including this one.
    pub step: usize,
}

/// Owns the optimizer state; the only writer of model parameters.
#[derive(Debug, Clone)]
pub struct Trainer<F: Real> {
    pub cfg: OptimConfig,
    pub state: OptimState<F>,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: &DualHeadModel<F>, cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer { state: OptimState::new(model), cfg })
    }

    /// Accumulates gradients over `micro_batches` (averaged), then applies one
    /// AdamW update. A non-finite gradient aborts the step without touching
    /// parameters or optimizer state.
    pub fn train_step(&mut self, model: &mut DualHeadModel<F>, micro_batches: &[Batch], w: LossWeights) -> Result<StepReport> {
        if micro_batches.is_empty() {
            return Err(Error::EmptyBatch);
        }
        w.validate()?;
        model.zero_grad();
        let scale = 1.0 / micro_batches.len() as f64;
        let mut agg = LossReport { loss_cls: 0.0, loss_reason: 0.0, loss_total: 0.0, n_targets: 0 };
        for mb in micro_batches {
            let r = accumulate_micro_batch(model, mb, w, scale)?;
            agg.loss_cls += r.loss_cls * scale;
            agg.loss_reason += r.loss_reason * scale;
            agg.loss_total += r.loss_total * scale;
            agg.n_targets += r.n_targets;
        }
        if let Some(p) = model.params().iter().find(|p| p.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite()))) {
            let param = p.name.clone();
            model.zero_grad();
            return Err(Error::NonFiniteGradient { param });
        }
        let lr = lr_at(self.state.step.min(self.cfg.total_steps), &self.cfg)?;
        adamw_update(model, &mut self.state, &self.cfg, lr);
        model.zero_grad();
        Ok(StepReport { losses: agg, lr, step: self.state.step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize, warmup: usize) -> OptimConfig {
        OptimConfig { lr: 1e-3, total_steps: total, warmup_steps: warmup, ..OptimConfig::default() }
    }

    #[test]
    fn schedule_landmarks() {
        let c = cfg(105, 5);
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert_eq!(lr_at(5, &c).unwrap(), 1e-3);
        assert!(lr_at(105, &c).unwrap().abs() < 1e-18);
        assert!((lr_at(55, &c).unwrap() - 5e-4).abs() < 1e-12);
        assert!((lr_at(2, &c).unwrap() - 4e-4).abs() < 1e-18);
        assert_eq!(lr_at(106, &c), Err(Error::StepOutOfRange { step: 106, total: 105 }));
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let c = cfg(300, 5);
        let lrs: Vec<f64> = (5..=300).map(|s| lr_at(s, &c).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(10, 5).validate().is_ok());
        assert!(cfg(4, 5).validate().is_err());
        assert!(OptimConfig { grad_accum: 0, ..cfg(10, 5) }.validate().is_err());
        assert!(OptimConfig { lr: 0.0, ..cfg(10, 5) }.validate().is_err());
        assert_eq!(OptimConfig { micro_batch: 4, grad_accum: 8, ..cfg(1, 0) }.steps_per_epoch(65), 3);
    }
}
