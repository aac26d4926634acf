//! Classification cross-entropy, masked next-token loss and their weighted sum.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::TokenId;

/// Weights of the joint objective `beta * L_cls + alpha * L_reason`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub const DHRD: LossWeights = LossWeights { alpha: 1.0, beta: 1.0 };
    /// Pooled-classifier baseline: no reasoning loss.
    pub const POOLED_BASELINE: LossWeights = LossWeights { alpha: 0.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("loss.alpha", self.alpha), ("loss.beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config { key, reason: alloc::format!("must be finite and >= 0, got {}", v) });
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config { key: "loss.alpha", reason: "alpha and beta cannot both be zero".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss_cls: f64,
    pub loss_reason: f64,
    pub loss_total: f64,
    /// Number of scored next-token targets.
    pub n_targets: usize,
}

/// Mean cross-entropy of class logits `z[B×K]` against `labels`.
pub fn cls_loss<F: Real>(tape: &mut Tape<F>, z: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape("cls_loss", alloc::format!("logits {:?} for {} labels", shape, labels.len())));
    }
    let classes = shape[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let w = F::one() / F::from_usize(labels.len()).unwrap();
    let weights = alloc::vec![w; labels.len()];
    tape.nll_rows(z, labels, &weights)
}

/// Masked next-token loss over `logits[B×T×V]` (any `[..×V]` works; rows are
/// flattened).
///
/// `targets` and `mask` are pre-shifted: entry `(i, t)` holds the token at
/// `t + 1` and whether it is scored. The loss is the sum of scored negative
/// log-likelihoods divided by the global count N; N = 0 is an error.
pub fn reason_loss<F: Real>(tape: &mut Tape<F>, logits: Var, targets: &[TokenId], mask: &[u8]) -> Result<(Var, usize)> {
    let shape = tape.shape(logits).to_vec();
    let rows: usize = shape[..shape.len().saturating_sub(1)].iter().product();
    if shape.len() < 2 || targets.len() != rows || mask.len() != rows {
        return Err(Error::shape(
            "reason_loss",
            alloc::format!("logits {:?}, {} targets, {} mask entries", shape, targets.len(), mask.len()),
        ));
    }
    let n: usize = mask.iter().map(|&m| (m != 0) as usize).sum();
    if n == 0 {
        return Err(Error::DegenerateMask);
    }
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let weights: Vec<F> = mask.iter().map(|&m| if m != 0 { inv_n } else { F::zero() }).collect();
    let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    Ok((tape.nll_rows(logits, &targets, &weights)?, n))
}

/// `beta * loss_cls + alpha * loss_reason` on the tape.
pub fn total_loss<F: Real>(tape: &mut Tape<F>, loss_cls: Var, loss_reason: Var, w: LossWeights) -> Result<Var> {
    let c = tape.scale(loss_cls, F::from_f64_lossy(w.beta))?;
    let r = tape.scale(loss_reason, F::from_f64_lossy(w.alpha))?;
    tape.add(c, r)
}

/// Scalar form of [`total_loss`]; same rounding as the tape version.
pub fn total<F: Real>(loss_cls: F, loss_reason: F, w: LossWeights) -> Result<F> {
    let out = F::from_f64_lossy(w.beta) * loss_cls + F::from_f64_lossy(w.alpha) * loss_reason;
    if !loss_cls.is_finite() || !loss_reason.is_finite() || !out.is_finite() {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    Ok(out)
}

/// Value-only [`cls_loss`] on a plain tensor.
pub fn cls_loss_value<F: Real>(z: &Tensor<F>, labels: &[usize]) -> Result<F> {
    let mut tape = Tape::inference();
    let v = tape.leaf(z)?;
    let l = cls_loss(&mut tape, v, labels)?;
    tape.scalar_value(l)
}

/// Value-only [`reason_loss`] on a plain tensor.
pub fn reason_loss_value<F: Real>(logits: &Tensor<F>, targets: &[TokenId], mask: &[u8]) -> Result<(F, usize)> {
    let mut tape = Tape::inference();
    let v = tape.leaf(logits)?;
    let (l, n) = reason_loss(&mut tape, v, targets, mask)?;
    Ok((tape.scalar_value(l)?, n))
}
