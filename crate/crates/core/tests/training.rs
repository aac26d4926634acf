//! Optimizer against a scalar reference, gradient accumulation, determinism
//! and the α = 0 baseline regime.

use dhrd_core::losses::{self, LossWeights};
use dhrd_core::model::{DualHeadModel, ModelConfig, Part};
use dhrd_core::optim::{adamw_step, OptimConfig, Trainer};
use dhrd_core::rng::seeded;
use dhrd_core::sequences::{build_sequence, collate, Example, LabelSet, TrainSequence};
use dhrd_core::tokenizer::{ANS, PAD, REASON};
use dhrd_core::{train, Tape};
use rand::Rng;

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_len: 48, mlp_hidden: 8, seed, ..ModelConfig::default() }
}

fn opt(total: usize) -> OptimConfig {
    OptimConfig { lr: 1e-2, warmup_steps: 0, total_steps: total, grad_accum: 1, micro_batch: 4, epochs: 1, ..OptimConfig::default() }
}

/// Same-length examples, so every micro-batch has the same target count.
fn examples(n: usize, seed: u64) -> Vec<Example> {
    let labels = LabelSet::new(["A", "B"]).unwrap();
    let mut r = seeded(seed);
    (0..n)
        .map(|i| {
            let x: String = (0..6).map(|_| r.random_range(b'a'..=b'm') as char).collect();
            let y: String = (0..4).map(|_| r.random_range(b'n'..=b'z') as char).collect();
            Example::from_text(&x, &y, ["A", "B"][i % 2], &labels, None, "t").unwrap()
        })
        .collect()
}

fn seqs(ex: &[Example]) -> Vec<TrainSequence> {
    ex.iter().map(|e| build_sequence(e, REASON, ANS).unwrap()).collect()
}

fn flat(m: &DualHeadModel<f64>) -> Vec<f64> {
    m.params().iter().flat_map(|p| p.tensor.data().to_vec()).collect()
}

#[test]
fn adamw_matches_scalar_reference() {
    let cfg = OptimConfig { weight_decay: 0.05, ..OptimConfig::default() };
    let mut r = seeded(9);
    let (mut x, mut m, mut v) = ([0.7f64], [0.0], [0.0]);
    let (mut rx, mut rm, mut rv) = (0.7f64, 0.0f64, 0.0f64);
    for t in 1..=100 {
        let g: f64 = r.random_range(-1.0..1.0);
        let lr = 1e-2 * (1.0 + (t as f64).sin()) / 2.0;
        adamw_step(&mut x, Some(&[g]), &mut m, &mut v, t, &cfg, lr, true);
        rx -= lr * cfg.weight_decay * rx;
        rm = cfg.beta1 * rm + (1.0 - cfg.beta1) * g;
        rv = cfg.beta2 * rv + (1.0 - cfg.beta2) * g * g;
        let mhat = rm / (1.0 - cfg.beta1.powi(t as i32));
        let vhat = rv / (1.0 - cfg.beta2.powi(t as i32));
        rx -= lr * mhat / (vhat.sqrt() + cfg.eps);
        assert!((x[0] - rx).abs() < 1e-12, "step {}: {} vs {}", t, x[0], rx);
    }
}

#[test]
fn decay_is_decoupled_from_the_gradient() {
    let cfg = OptimConfig { weight_decay: 0.1, ..OptimConfig::default() };
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    let mut x = [1.0f64, -2.0, 0.5];
    adamw_step(&mut x, None, &mut m, &mut v, 1, &cfg, 0.01, true);
    let shrink = 1.0 - 0.01 * 0.1;
    assert_eq!(x, [shrink, -2.0 * shrink, 0.5 * shrink]);
    let mut y = [1.0f64, -2.0, 0.5];
    adamw_step(&mut y, None, &mut m, &mut v, 2, &cfg, 0.01, false);
    assert_eq!(y, [1.0, -2.0, 0.5]);
}

#[test]
fn accumulation_matches_one_big_batch() {
    let s = seqs(&examples(4, 1));
    let w = LossWeights::DHRD;
    let mut a = DualHeadModel::<f64>::new(tiny(3)).unwrap();
    let mut b = a.clone();
    let mut ta = Trainer::new(&a, opt(1)).unwrap();
    let mut tb = Trainer::new(&b, OptimConfig { grad_accum: 2, micro_batch: 2, ..opt(1) }).unwrap();
    let ra = ta.train_step(&mut a, &[collate(&s, PAD).unwrap()], w).unwrap();
    let halves = [collate(&s[..2], PAD).unwrap(), collate(&s[2..], PAD).unwrap()];
    let rb = tb.train_step(&mut b, &halves, w).unwrap();
    assert!((ra.losses.loss_total - rb.losses.loss_total).abs() < 1e-12);
    for (x, y) in flat(&a).iter().zip(flat(&b)) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn two_identical_micro_batches_equal_one() {
    let s = seqs(&examples(4, 9));
    let mut a = DualHeadModel::<f64>::new(tiny(1)).unwrap();
    let mut b = a.clone();
    let batch = collate(&s, PAD).unwrap();
    Trainer::new(&a, opt(1)).unwrap().train_step(&mut a, std::slice::from_ref(&batch), LossWeights::DHRD).unwrap();
    let cfg = OptimConfig { grad_accum: 2, ..opt(1) };
    Trainer::new(&b, cfg).unwrap().train_step(&mut b, &[batch.clone(), batch], LossWeights::DHRD).unwrap();
    for (x, y) in flat(&a).iter().zip(flat(&b)) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn training_is_deterministic() {
    let s = seqs(&examples(16, 2));
    let run = || {
        let mut m = DualHeadModel::<f32>::new(tiny(5)).unwrap();
        let mut t = Trainer::new(&m, OptimConfig { seed: 5, grad_accum: 2, micro_batch: 2, ..opt(8) }).unwrap();
        let mut losses = Vec::new();
        for e in 0..2 {
            train::train_epoch(&mut m, &mut t, &s, e, LossWeights::DHRD, |r| losses.push(r.losses.loss_total.to_bits())).unwrap();
        }
        (m.checksum(), losses)
    };
    assert_eq!(run(), run());
}

#[test]
fn heads_only_receive_their_own_gradients() {
    let ex = examples(4, 4);
    let batch = collate(&seqs(&ex), PAD).unwrap();
    let model = DualHeadModel::<f64>::new(tiny(6)).unwrap();
    for cls_only in [true, false] {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let h = model.forward_hidden(&mut tape, &bound, &batch.full_tokens, &batch.full_pad_mask, batch.size, batch.full_len).unwrap();
        let loss = if cls_only {
            let z = model.classify(&mut tape, &bound, h, &batch.pool_indices).unwrap();
            losses::cls_loss(&mut tape, z, &batch.label_indices).unwrap()
        } else {
            let l = model.lm_logits(&mut tape, &bound, h).unwrap();
            losses::reason_loss(&mut tape, l, &batch.lm_targets, &batch.lm_mask).unwrap().0
        };
        tape.backward(loss).unwrap();
        for (p, &v) in model.params().iter().zip(bound.vars()) {
            let g = tape.grad(v).map(|g| g.iter().any(|&x| x != 0.0)).unwrap_or(false);
            if p.part == Part::ClsHead {
                assert_eq!(g, cls_only, "{}", p.name);
            }
        }
        if cls_only {
            // the pooled state depends on x only: rows of tokens that never occur
            // in any input, and positions past the longest input, get nothing
            let g = tape.grad(bound.vars()[0]).unwrap();
            let d = model.config().d_model;
            for tok in [REASON as usize, ANS as usize, b'z' as usize] {
                assert!(g[tok * d..(tok + 1) * d].iter().all(|&x| x == 0.0));
            }
            let gp = tape.grad(bound.vars()[1]).unwrap();
            assert!(gp[6 * d..].iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn baseline_leaves_lm_only_rows_to_weight_decay() {
    let ex = examples(8, 7);
    let s = seqs(&ex);
    let mut model = DualHeadModel::<f64>::new(tiny(8)).unwrap();
    let before = model.clone();
    let cfg = OptimConfig { weight_decay: 0.01, grad_accum: 2, ..opt(1) };
    let lr = cfg.lr;
    let mut t = Trainer::new(&model, cfg).unwrap();
    let batches = [collate(&s[..4], PAD).unwrap(), collate(&s[4..], PAD).unwrap()];
    t.train_step(&mut model, &batches, LossWeights::POOLED_BASELINE).unwrap();
    let d = model.config().d_model;
    let shrink = 1.0 - lr * 0.01;
    let check = |name: &str, rows: &[usize]| {
        let (a, b) = (before.param(name).unwrap().tensor.data(), model.param(name).unwrap().tensor.data());
        for &r in rows {
            for i in r * d..(r + 1) * d {
                assert_eq!(b[i], a[i] * shrink, "{} row {}", name, r);
            }
        }
    };
    // reasoning bytes are n..=z, inputs a..=m
    check("tok_emb", &[REASON as usize, ANS as usize, b'n' as usize, b'z' as usize]);
    check("pos_emb", &(6..48).collect::<Vec<_>>());
    // and the classifier did move
    assert_ne!(before.param("cls.fc2.weight").unwrap().tensor.data(), model.param("cls.fc2.weight").unwrap().tensor.data());
}
