//! Whole-model gradient of the joint loss against central differences (f64).

use dhrd_core::losses::{self, LossWeights};
use dhrd_core::model::{DualHeadModel, ModelConfig};
use dhrd_core::rng::seeded;
use dhrd_core::sequences::{build_sequence, collate, Batch, Example, LabelSet};
use dhrd_core::tokenizer::{ANS, PAD, REASON};
use dhrd_core::Tape;
use rand::Rng;

fn loss(m: &DualHeadModel<f64>, b: &Batch, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape).unwrap();
    let h = m.forward_hidden(&mut tape, &bound, &b.full_tokens, &b.full_pad_mask, b.size, b.full_len).unwrap();
    let z = m.classify(&mut tape, &bound, h, &b.pool_indices).unwrap();
    let lc = losses::cls_loss(&mut tape, z, &b.label_indices).unwrap();
    let lg = m.lm_logits(&mut tape, &bound, h).unwrap();
    let (lr, _) = losses::reason_loss(&mut tape, lg, &b.lm_targets, &b.lm_mask).unwrap();
    let t = losses::total_loss(&mut tape, lc, lr, LossWeights::DHRD).unwrap();
    let v = tape.scalar_value(t).unwrap();
    if !grads {
        return (v, Vec::new());
    }
    tape.backward(t).unwrap();
    let g =
        m.params().iter().zip(bound.vars()).map(|(p, &var)| tape.grad(var).map_or(vec![0.0; p.tensor.numel()], <[f64]>::to_vec)).collect();
    (v, g)
}

#[test]
fn every_parameter_matches_finite_differences() {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 300,
        max_len: 12,
        mlp_hidden: 8,
        seed: 7,
        ..ModelConfig::default()
    };
    let mut m = DualHeadModel::<f64>::new(cfg).unwrap();
    // larger weights than the 0.02 init so that every path carries signal
    let mut r = seeded(3);
    for p in m.params_mut() {
        for x in p.tensor.data_mut() {
            *x += r.random_range(-0.3..0.3);
        }
    }
    let labels = LabelSet::yes_no();
    let ex = [
        Example::from_text("abcd", "xy", "Yes", &labels, None, "t").unwrap(),
        Example::from_text("ba", "zzz", "No", &labels, None, "t").unwrap(),
    ];
    let seqs: Vec<_> = ex.iter().map(|e| build_sequence(e, REASON, ANS).unwrap()).collect();
    let b = collate(&seqs, PAD).unwrap();
    let (_, g) = loss(&m, &b, true);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for pi in 0..m.params().len() {
        for i in 0..m.params()[pi].tensor.numel() {
            let x0 = m.params()[pi].tensor.data()[i];
            m.params_mut()[pi].tensor.data_mut()[i] = x0 + h;
            let up = loss(&m, &b, false).0;
            m.params_mut()[pi].tensor.data_mut()[i] = x0 - h;
            let dn = loss(&m, &b, false).0;
            m.params_mut()[pi].tensor.data_mut()[i] = x0;
            let num = (up - dn) / (2.0 * h);
            let a = g[pi][i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-5);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{}[{}]: analytic {} numeric {}", m.params()[pi].name, i, a, num);
        }
    }
    println!("worst relative error {:e}", worst);
}
