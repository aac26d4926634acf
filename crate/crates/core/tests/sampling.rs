//! Nucleus sampling frequencies against the truncated distribution.

use dhrd_core::rng::seeded;
use dhrd_core::sampling::{nucleus_distribution, sample_next, DecodeSettings};

#[test]
fn nucleus_keeps_the_smallest_covering_prefix() {
    // probabilities ∝ 4, 3, 2, 1
    let logits: Vec<f64> = [4.0f64, 3.0, 2.0, 1.0].iter().map(|p| p.ln()).collect();
    let p = nucleus_distribution(&logits, 1.0, 0.7);
    assert!((p[0] - 4.0 / 7.0).abs() < 1e-12 && (p[1] - 3.0 / 7.0).abs() < 1e-12);
    assert_eq!(&p[2..], &[0.0, 0.0]);
    let full = nucleus_distribution(&logits, 1.0, 1.0);
    assert!((full[3] - 0.1).abs() < 1e-12);
    // temperature sharpens toward the max
    let cold = nucleus_distribution(&logits, 0.1, 1.0);
    assert!(cold[0] > 0.94);
}

#[test]
fn sample_frequencies_pass_chi_square() {
    let logits = [0.3f64, -1.0, 1.2, 0.0, 0.7, -0.4];
    let s = DecodeSettings { temperature: 0.8, top_p: 0.9, max_new_tokens: 1, stop_token: None };
    let p = nucleus_distribution(&logits, s.temperature, s.top_p);
    let mut counts = [0usize; 6];
    let mut rng = seeded(17);
    let n = 10_000;
    for _ in 0..n {
        counts[sample_next(&logits, &s, &mut rng)] += 1;
    }
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (c, q) in counts.iter().zip(&p) {
        if *q == 0.0 {
            assert_eq!(*c, 0, "token outside the nucleus was drawn");
            continue;
        }
        let e = q * n as f64;
        chi2 += (*c as f64 - e).powi(2) / e;
        dof += 1;
    }
    // 99.9% quantile for ≤ 5 degrees of freedom is at most 20.5
    assert!(dof >= 3);
    assert!(chi2 < 20.5, "chi2 {} with {} cells, counts {:?}", chi2, dof, counts);
}
