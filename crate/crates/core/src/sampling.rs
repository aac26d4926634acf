//! Temperature + nucleus sampling for the reasoning head, and label parsing
//! for chain-of-thought style generations.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sequences::LabelSet;
use crate::tokenizer::{self, TokenId, ANS};

/// Below this temperature sampling degenerates to argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub stop_token: Option<TokenId>,
}

impl DecodeSettings {
    /// `do_sample=True, temperature=0.1, top_p=0.7, max_new_tokens=500`.
    pub const REFERENCE: DecodeSettings = DecodeSettings { temperature: 0.1, top_p: 0.7, max_new_tokens: 500, stop_token: None };

    pub fn with_max_new_tokens(self, max_new_tokens: usize) -> Self {
        DecodeSettings { max_new_tokens, ..self }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config { key: "decode.temperature", reason: "must be > 0".into() });
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config { key: "decode.top_p", reason: "must be in (0, 1]".into() });
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config { key: "decode.max_new_tokens", reason: "must be >= 1".into() });
        }
        Ok(())
    }
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Probabilities after temperature scaling and top-p truncation, renormalized.
/// Ties in probability keep the lower token id first.
pub fn nucleus_distribution<F: Real>(logits: &[F], temperature: f64, top_p: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l.as_f64() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scaled.iter().map(|&s| num_traits::Float::exp(s - max)).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    if top_p >= 1.0 {
        return probs;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut keep = alloc::vec![false; probs.len()];
    let mut cum = 0.0;
    for &i in &order {
        keep[i] = true;
        cum += probs[i];
        if cum >= top_p {
            break;
        }
    }
    let kept: f64 = probs.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p).sum();
    probs.iter().zip(&keep).map(|(&p, &k)| if k { p / kept } else { 0.0 }).collect()
}

pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws the next token id from `logits`.
pub fn sample_next<F: Real, R: Rng + ?Sized>(logits: &[F], settings: &DecodeSettings, rng: &mut R) -> usize {
    if settings.temperature < GREEDY_TEMPERATURE {
        return argmax(logits);
    }
    let probs = nucleus_distribution(logits, settings.temperature, settings.top_p);
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// Label of a chain-of-thought generation: the first label verbalization
/// that follows the answer marker (`<ANS>` or the text `Final Answer:`).
/// `None` means the generation is unparseable.
pub fn extract_label(generated: &[TokenId], labels: &LabelSet) -> Option<usize> {
    let tail = match generated.iter().position(|&t| t == ANS) {
        Some(p) => tokenizer::decode(&generated[p + 1..]),
        None => {
            let text = tokenizer::decode(generated);
            let at = text.find("Final Answer:")?;
            text[at + "Final Answer:".len()..].into()
        }
    };
    let tail = tail.trim_start();
    labels.labels().iter().enumerate().filter(|(_, l)| tail.starts_with(l.as_str())).max_by_key(|(_, l)| l.len()).map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn greedy_below_threshold() {
        let s = DecodeSettings { temperature: 1e-7, top_p: 0.5, max_new_tokens: 1, stop_token: None };
        let mut r = seeded(0);
        for _ in 0..20 {
            assert_eq!(sample_next(&[0.1f32, 2.0, 1.9, -3.0], &s, &mut r), 1);
        }
    }

    #[test]
    fn nucleus_keeps_smallest_covering_prefix() {
        // probs ~ [0.643, 0.236, 0.087, 0.032]
        let d = nucleus_distribution(&[3.0f64, 2.0, 1.0, 0.0], 1.0, 0.7);
        assert!(d[0] > 0.0 && d[1] > 0.0);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[3], 0.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let one = nucleus_distribution(&[3.0f64, 2.0, 1.0, 0.0], 1.0, 0.01);
        assert_eq!(one, alloc::vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn settings_validation() {
        assert!(DecodeSettings::REFERENCE.validate().is_ok());
        assert_eq!(DecodeSettings::REFERENCE.temperature, 0.1);
        assert_eq!(DecodeSettings::REFERENCE.top_p, 0.7);
        assert_eq!(DecodeSettings::REFERENCE.max_new_tokens, 500);
        assert!(DecodeSettings { top_p: 0.0, ..DecodeSettings::REFERENCE }.validate().is_err());
        assert!(DecodeSettings { temperature: 0.0, ..DecodeSettings::REFERENCE }.validate().is_err());
        assert!(DecodeSettings::REFERENCE.with_max_new_tokens(0).validate().is_err());
    }

    #[test]
    fn label_extraction() {
        let labels = LabelSet::yes_no();
        let mut g = tokenizer::encode("A>B, B>C");
        g.push(ANS);
        g.extend(tokenizer::encode(" Yes"));
        assert_eq!(extract_label(&g, &labels), Some(1));
        assert_eq!(extract_label(&tokenizer::encode("blah\nFinal Answer: No"), &labels), Some(0));
        assert_eq!(extract_label(&tokenizer::encode("no marker Yes"), &labels), None);
        assert_eq!(extract_label(&tokenizer::encode("Final Answer: maybe"), &labels), None);
    }
}
