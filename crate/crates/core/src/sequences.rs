//! Training sequences `[x, <REASON>, r, <ANS>, y]`, dual-stream batching and
//! the rationale/label alignment ablations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{self, TokenId, ANS, PAD, REASON};

/// Ordered class verbalizations; the position of a label is its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::Config { key: "data.labels", reason: "need at least two labels".into() });
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || labels[..i].contains(l) {
                return Err(Error::Config { key: "data.labels", reason: format!("empty or duplicate label {:?}", l) });
            }
        }
        Ok(LabelSet { labels })
    }

    /// `["No", "Yes"]`: index 1 is the positive class.
    pub fn yes_no() -> Self {
        LabelSet { labels: vec!["No".into(), "Yes".into()] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// One labeled instance: input `x`, rationale `r` (possibly empty) and gold label `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub x_tokens: Vec<TokenId>,
    pub r_tokens: Vec<TokenId>,
    pub label_index: usize,
    pub label_tokens: Vec<TokenId>,
    pub group_id: Option<u64>,
    pub task_id: String,
}

impl Example {
    /// Tokenizes text fields with the byte-level tokenizer.
    pub fn from_text(input: &str, reasoning: &str, label: &str, labels: &LabelSet, group_id: Option<u64>, task_id: &str) -> Result<Self> {
        let label_index =
            labels.index_of(label).ok_or_else(|| Error::InvalidExample(format!("label {:?} not in {:?}", label, labels.labels())))?;
        let ex = Example {
            x_tokens: tokenizer::encode(input),
            r_tokens: tokenizer::encode(reasoning),
            label_index,
            label_tokens: tokenizer::encode(label),
            group_id,
            task_id: task_id.to_string(),
        };
        ex.validate(labels.len())?;
        Ok(ex)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.x_tokens.is_empty() {
            return Err(Error::InvalidExample("empty input".into()));
        }
        if self.label_tokens.is_empty() {
            return Err(Error::InvalidExample("empty label verbalization".into()));
        }
        if self.label_index >= classes {
            return Err(Error::LabelOutOfRange { label: self.label_index, classes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceOptions {
    pub reason_token: TokenId,
    pub ans_token: TokenId,
    /// Whether next-token targets inside the label span count toward the LM loss.
    pub lm_covers_label: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions { reason_token: REASON, ans_token: ANS, lm_covers_label: true }
    }
}

/// Concatenated sequence with its next-token supervision.
///
/// `lm_targets[t] = tokens[t + 1]` and `lm_mask[t] = 1` iff that target is
/// scored, so `Σ lm_mask` is the normalizer N of the reasoning loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<TokenId>,
    pub input_len: usize,
    pub lm_targets: Vec<TokenId>,
    pub lm_mask: Vec<u8>,
    pub pool_index: usize,
    pub label_index: usize,
}

impl TrainSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.lm_mask.iter().map(|&m| m as usize).sum()
    }
}

fn check_payload(tokens: &[TokenId], field: &'static str, reserved: &[TokenId]) -> Result<()> {
    match tokens.iter().find(|&&t| tokenizer::is_reserved(t) || reserved.contains(&t)) {
        Some(&token) => Err(Error::ReservedTokenInPayload { token, field }),
        None => Ok(()),
    }
}

pub fn build_sequence(ex: &Example, reason_token: TokenId, ans_token: TokenId) -> Result<TrainSequence> {
    build_sequence_with(ex, &SequenceOptions { reason_token, ans_token, ..SequenceOptions::default() })
}

/// `[x, <REASON>, r, <ANS>, y]`; the `<REASON>` segment is dropped when `r` is empty.
pub fn build_sequence_with(ex: &Example, opts: &SequenceOptions) -> Result<TrainSequence> {
    if opts.reason_token == opts.ans_token {
        return Err(Error::InvalidExample("reason and answer tokens must differ".into()));
    }
    if ex.x_tokens.is_empty() || ex.label_tokens.is_empty() {
        return Err(Error::InvalidExample("input and label must be non-empty".into()));
    }
    let reserved = [opts.reason_token, opts.ans_token];
    check_payload(&ex.x_tokens, "input", &reserved)?;
    check_payload(&ex.r_tokens, "rationale", &reserved)?;
    check_payload(&ex.label_tokens, "label", &reserved)?;

    let mut tokens = Vec::with_capacity(ex.x_tokens.len() + ex.r_tokens.len() + ex.label_tokens.len() + 2);
    tokens.extend_from_slice(&ex.x_tokens);
    if !ex.r_tokens.is_empty() {
        tokens.push(opts.reason_token);
        tokens.extend_from_slice(&ex.r_tokens);
    }
    tokens.push(opts.ans_token);
    let label_start = tokens.len();
    tokens.extend_from_slice(&ex.label_tokens);

    let len = tokens.len();
    let mut lm_targets = vec![PAD; len];
    let mut lm_mask = vec![0u8; len];
    for t in 0..len - 1 {
        lm_targets[t] = tokens[t + 1];
        lm_mask[t] = u8::from(opts.lm_covers_label || t + 1 < label_start);
    }
    Ok(TrainSequence {
        tokens,
        input_len: ex.x_tokens.len(),
        lm_targets,
        lm_mask,
        pool_index: ex.x_tokens.len() - 1,
        label_index: ex.label_index,
    })
}

/// Inference sees only `x`, pooled at its last token.
pub fn inference_input(ex: &Example) -> (Vec<TokenId>, usize) {
    (ex.x_tokens.clone(), ex.x_tokens.len().saturating_sub(1))
}

/// Two independently padded streams: the classification input (`x` only)
/// and the full training sequence. Matrices are row-major and flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub cls_len: usize,
    pub cls_tokens: Vec<TokenId>,
    pub cls_pad_mask: Vec<u8>,
    pub full_len: usize,
    pub full_tokens: Vec<TokenId>,
    pub full_pad_mask: Vec<u8>,
    pub lm_targets: Vec<TokenId>,
    pub lm_mask: Vec<u8>,
    pub pool_indices: Vec<usize>,
    pub label_indices: Vec<usize>,
}

impl Batch {
    /// N: number of scored next-token targets.
    pub fn target_count(&self) -> usize {
        self.lm_mask.iter().map(|&m| m as usize).sum()
    }
}

pub fn collate(seqs: &[TrainSequence], pad_token: TokenId) -> Result<Batch> {
    if seqs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let size = seqs.len();
    let cls_len = seqs.iter().map(|s| s.input_len).max().unwrap_or(0);
    let full_len = seqs.iter().map(TrainSequence::len).max().unwrap_or(0);
    let mut b = Batch {
        size,
        cls_len,
        cls_tokens: vec![pad_token; size * cls_len],
        cls_pad_mask: vec![0; size * cls_len],
        full_len,
        full_tokens: vec![pad_token; size * full_len],
        full_pad_mask: vec![0; size * full_len],
        lm_targets: vec![pad_token; size * full_len],
        lm_mask: vec![0; size * full_len],
        pool_indices: Vec::with_capacity(size),
        label_indices: Vec::with_capacity(size),
    };
    for (i, s) in seqs.iter().enumerate() {
        let c = i * cls_len;
        b.cls_tokens[c..c + s.input_len].copy_from_slice(&s.tokens[..s.input_len]);
        b.cls_pad_mask[c..c + s.input_len].iter_mut().for_each(|m| *m = 1);
        let f = i * full_len;
        let l = s.len();
        b.full_tokens[f..f + l].copy_from_slice(&s.tokens);
        b.full_pad_mask[f..f + l].iter_mut().for_each(|m| *m = 1);
        for t in 0..l {
            if s.lm_mask[t] == 1 {
                b.lm_targets[f + t] = s.lm_targets[t];
                b.lm_mask[f + t] = 1;
            }
        }
        b.pool_indices.push(s.pool_index);
        b.label_indices.push(s.label_index);
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationKind {
    ConsistentReasoningLabel,
    OnlyLabel,
    ShuffleReasoning,
    ShuffleReasoningLabel,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::ConsistentReasoningLabel,
        AblationKind::OnlyLabel,
        AblationKind::ShuffleReasoning,
        AblationKind::ShuffleReasoningLabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::ConsistentReasoningLabel => "ConsistentReasoningLabel",
            AblationKind::OnlyLabel => "OnlyLabel",
            AblationKind::ShuffleReasoning => "ShuffleReasoning",
            AblationKind::ShuffleReasoningLabel => "ShuffleReasoningLabel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AblationKind::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSetting {
    pub kind: AblationKind,
    pub seed: u64,
}

/// Applies an alignment ablation. Shuffles use a seeded derangement, so every
/// example ends up paired with another example's rationale (and label).
pub fn apply_ablation(dataset: &[Example], setting: AblationSetting) -> Result<Vec<Example>> {
    match setting.kind {
        AblationKind::ConsistentReasoningLabel => Ok(dataset.to_vec()),
        AblationKind::OnlyLabel => Ok(dataset.iter().map(|ex| Example { r_tokens: Vec::new(), ..ex.clone() }).collect()),
        AblationKind::ShuffleReasoning | AblationKind::ShuffleReasoningLabel => {
            let perm = rng::derangement(dataset.len(), &mut rng::stream(setting.seed, rng::Purpose::Ablation))?;
            let with_label = setting.kind == AblationKind::ShuffleReasoningLabel;
            Ok(dataset
                .iter()
                .zip(&perm)
                .map(|(ex, &src)| {
                    let donor = &dataset[src];
                    let mut out = ex.clone();
                    out.r_tokens = donor.r_tokens.clone();
                    if with_label {
                        out.label_tokens = donor.label_tokens.clone();
                        out.label_index = donor.label_index;
                    }
                    out
                })
                .collect())
        }
    }
}
