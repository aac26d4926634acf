//! Synthetic tasks with programmatically faithful rationales, the
//! UnifiedQA-style prompt layout, and the guarded teacher prompt used when
//! rationales come from an external model instead.
//!
//! Every record is a pure function of `(kind, difficulty, seed, split, index)`.
//! Even indices are "Yes" records and odd indices "No" records, so any split
//! with an even count is exactly balanced.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::sequences::{Example, LabelSet};

pub const YES: &str = "Yes";
pub const NO: &str = "No";
pub const END_OF_REASONING: &str = "[END OF REASONING]";
pub const CLASSIFY_LINE: &str = "Is the answer correct Yes or No?";

const PARITY_QUESTION: &str = "Is the count of ones even or odd?";
const CHAIN_QUESTION: &str = "Does it follow?";
/// Target share of distractor facts among all facts of a chain record.
pub const DISTRACTOR_SHARE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Parity,
    ChainEntail,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Parity => "parity",
            TaskKind::ChainEntail => "chain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parity" => Some(TaskKind::Parity),
            "chain" | "chainentail" | "chain_entail" | "chain-entail" => Some(TaskKind::ChainEntail),
            _ => None,
        }
    }

    pub fn default_difficulty(self) -> usize {
        match self {
            TaskKind::Parity => 8,
            TaskKind::ChainEntail => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7a,
            Split::Val => 0x7b,
            Split::Test => 0x7c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub difficulty: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Self {
        TaskSpec { kind, n_train, n_val, n_test, difficulty: kind.default_difficulty(), seed }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.difficulty == 0 {
            return Err(Error::Config { key: "task.difficulty", reason: "must be >= 1".into() });
        }
        if self.kind == TaskKind::ChainEntail && !(2..=16).contains(&self.difficulty) {
            return Err(Error::Config { key: "task.difficulty", reason: "chain length must be in 2..=16".into() });
        }
        Ok(())
    }
}

/// A QA-shaped record before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptedRecord {
    pub passage: String,
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    pub label: String,
}

fn record_rng(spec: &TaskSpec, split: Split, index: usize) -> rng::Rng {
    let kind = match spec.kind {
        TaskKind::Parity => 1,
        TaskKind::ChainEntail => 2,
    };
    let s = rng::mix(rng::mix(spec.seed, kind * 1000 + spec.difficulty as u64), split.tag());
    rng::seeded(rng::mix(s, index as u64))
}

fn check_index(spec: &TaskSpec, split: Split, index: usize) -> Result<()> {
    spec.validate()?;
    let n = spec.count(split);
    if index >= n {
        return Err(Error::IndexOutOfRange { what: "split", index, size: n });
    }
    Ok(())
}

pub fn gen_record(spec: &TaskSpec, split: Split, index: usize) -> Result<PromptedRecord> {
    match spec.kind {
        TaskKind::Parity => gen_parity(spec, split, index),
        TaskKind::ChainEntail => gen_chain_entail(spec, split, index),
    }
}

pub fn gen_split(spec: &TaskSpec, split: Split) -> Result<Vec<PromptedRecord>> {
    (0..spec.count(split)).map(|i| gen_record(spec, split, i)).collect()
}

// ---------------------------------------------------------------------------
// parity

/// Bit string; the candidate answer is "even" or "odd".
pub fn gen_parity(spec: &TaskSpec, split: Split, index: usize) -> Result<PromptedRecord> {
    check_index(spec, split, index)?;
    let mut rng = record_rng(spec, split, index);
    let bits: String = (0..spec.difficulty).map(|_| if rng.random::<bool>() { '1' } else { '0' }).collect();
    let want_yes = index.is_multiple_of(2);
    let even = bits.bytes().filter(|&b| b == b'1').count() % 2 == 0;
    let candidate_even = even == want_yes;
    let answer = if candidate_even { "even" } else { "odd" };
    let (reasoning, label) = parity_teacher(&bits, answer)?;
    Ok(PromptedRecord { passage: bits, question: PARITY_QUESTION.into(), answer: answer.into(), reasoning, label })
}

/// Running parity after each bit (`e`/`o`), then the verdict on the count.
pub fn parity_rationale(bits: &str) -> String {
    let mut odd = false;
    let steps: Vec<&str> = bits
        .bytes()
        .map(|b| {
            odd ^= b == b'1';
            if odd {
                "o"
            } else {
                "e"
            }
        })
        .collect();
    format!("running parity {}; the count of ones is {}", steps.join(","), if odd { "odd" } else { "even" })
}

fn parity_teacher(bits: &str, answer: &str) -> Result<(String, String)> {
    if bits.is_empty() || !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Error::InvalidExample(format!("not a bit string: {:?}", bits)));
    }
    let even = bits.bytes().filter(|&b| b == b'1').count() % 2 == 0;
    let label = match answer {
        "even" => even,
        "odd" => !even,
        other => return Err(Error::InvalidExample(format!("parity candidate {:?}", other))),
    };
    Ok((parity_rationale(bits), (if label { YES } else { NO }).into()))
}

// ---------------------------------------------------------------------------
// chain entailment

fn fact(a: char, b: char) -> String {
    format!("{}>{}", a, b)
}

/// Ordered-pair facts over distinct capital letters; the candidate answer is a
/// pair `X>Y` that may or may not follow by transitivity.
pub fn gen_chain_entail(spec: &TaskSpec, split: Split, index: usize) -> Result<PromptedRecord> {
    check_index(spec, split, index)?;
    let mut rng = record_rng(spec, split, index);
    let n = spec.difficulty;
    let chain_facts = n - 1;
    let distractors = ((DISTRACTOR_SHARE / (1.0 - DISTRACTOR_SHARE)) * chain_facts as f64 + 0.5) as usize;
    let mut letters: Vec<char> = ('A'..='Z').collect();
    letters.shuffle(&mut rng);
    let chain = &letters[..n];
    let extra = &letters[n..n + 2 * distractors];

    let mut facts: Vec<(char, char)> = chain.windows(2).map(|w| (w[0], w[1])).collect();
    facts.extend(extra.chunks(2).map(|p| (p[0], p[1])));
    facts.shuffle(&mut rng);

    let want_yes = index.is_multiple_of(2);
    let (x, y) = if want_yes {
        let i = rng.random_range(0..n - 1);
        let j = rng.random_range(i + 1..n);
        (chain[i], chain[j])
    } else if extra.is_empty() || rng.random::<bool>() {
        let i = rng.random_range(0..n - 1);
        let j = rng.random_range(i + 1..n);
        (chain[j], chain[i])
    } else {
        let c = chain[rng.random_range(0..n)];
        let e = extra[rng.random_range(0..extra.len())];
        if rng.random::<bool>() {
            (c, e)
        } else {
            (e, c)
        }
    };
    let passage = facts.iter().map(|&(a, b)| fact(a, b)).collect::<Vec<_>>().join(". ") + ".";
    let answer = fact(x, y);
    let (reasoning, label) = chain_teacher(&passage, &answer)?;
    debug_assert_eq!(label == YES, want_yes);
    Ok(PromptedRecord { passage, question: CHAIN_QUESTION.into(), answer, reasoning, label })
}

fn parse_pair(s: &str) -> Option<(char, char)> {
    let mut it = s.trim().chars();
    let a = it.next()?;
    (it.next()? == '>').then_some(())?;
    let b = it.next()?;
    (it.next().is_none() && a.is_ascii_uppercase() && b.is_ascii_uppercase() && a != b).then_some((a, b))
}

pub fn parse_facts(passage: &str) -> Option<Vec<(char, char)>> {
    passage.split('.').map(str::trim).filter(|s| !s.is_empty()).map(parse_pair).collect()
}

/// Follows successors from `x`. When `y` is reached the hops are listed with
/// the chain; otherwise the rationale names where the path breaks.
pub fn chain_rationale(facts: &[(char, char)], x: char, y: char) -> (String, bool) {
    let mut hops: Vec<String> = Vec::new();
    let mut nodes = alloc::vec![x];
    let mut cur = x;
    let mut reached = false;
    while let Some(&(_, next)) = facts.iter().find(|&&(a, _)| a == cur) {
        if nodes.contains(&next) {
            break;
        }
        hops.push(fact(cur, next));
        nodes.push(next);
        cur = next;
        if next == y {
            reached = true;
            break;
        }
    }
    let text = if reached {
        let chain: Vec<String> = nodes.iter().map(char::to_string).collect();
        format!("{}, therefore chain {}", hops.join(", "), chain.join(","))
    } else if hops.is_empty() {
        format!("the path ends at {}, so {} is never reached", x, y)
    } else {
        format!("{}, then the path ends at {}, so {} is never reached", hops.join(", "), cur, y)
    };
    (text, reached)
}

fn chain_teacher(passage: &str, answer: &str) -> Result<(String, String)> {
    let facts = parse_facts(passage).ok_or_else(|| Error::InvalidExample(format!("bad facts: {:?}", passage)))?;
    let (x, y) = parse_pair(answer).ok_or_else(|| Error::InvalidExample(format!("bad pair: {:?}", answer)))?;
    let (text, reached) = chain_rationale(&facts, x, y);
    Ok((text, (if reached { YES } else { NO }).into()))
}

/// Stand-in teacher: derives rationale and gold label from the visible fields.
pub fn oracle_teacher(passage: &str, question: &str, answer: &str) -> Result<(String, String)> {
    match question {
        PARITY_QUESTION => parity_teacher(passage, answer),
        CHAIN_QUESTION => chain_teacher(passage, answer),
        other => Err(Error::InvalidExample(format!("unknown question {:?}", other))),
    }
}

// ---------------------------------------------------------------------------
// prompt formats

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedQa {
    /// Classification input, four lines ending with the fixed Yes/No question.
    pub input: String,
    /// Train-time suffix: `Reasoning: …\nFinal Answer: …` (reasoning line omitted when empty).
    pub reason: String,
    pub label: String,
}

pub fn format_unifiedqa(rec: &PromptedRecord) -> UnifiedQa {
    let input = format!("Passage: {}\nQuestion: {}\nAnswer: {}\n{}", rec.passage, rec.question, rec.answer, CLASSIFY_LINE);
    let reason = if rec.reasoning.is_empty() {
        format!("Final Answer: {}", rec.label)
    } else {
        format!("Reasoning: {}\nFinal Answer: {}", rec.reasoning, rec.label)
    };
    UnifiedQa { input, reason, label: rec.label.clone() }
}

/// Training example: the formatted input as `x`, the bare rationale as `r`.
pub fn record_example(rec: &PromptedRecord, labels: &LabelSet, task_id: &str) -> Result<Example> {
    let f = format_unifiedqa(rec);
    Example::from_text(&f.input, &rec.reasoning, &f.label, labels, None, task_id)
}

/// Inverse of the input part of [`format_unifiedqa`]: `(passage, question, answer)`.
pub fn parse_unifiedqa(input: &str) -> Option<(String, String, String)> {
    let rest = input.strip_prefix("Passage: ")?;
    let rest = rest.strip_suffix(CLASSIFY_LINE)?.strip_suffix('\n')?;
    let (passage, rest) = rest.split_once("\nQuestion: ")?;
    let (question, answer) = rest.split_once("\nAnswer: ")?;
    Some((passage.into(), question.into(), answer.into()))
}

/// Guarded prompt asking an external teacher for a fresh rationale that
/// justifies the gold label without stating it.
pub fn emit_teacher_prompt(rec: &PromptedRecord) -> String {
    format!(
        "Instruction: Given the passage, question, and candidate answer, write a short explanation \
(2-5 sentences) that justifies the gold label. Let's think step by step.\n\
Gold label: {label}\n\
Rules:\n\
(1) Do not include \"Yes/No\", \"True/False\", or synonyms in the explanation.\n\
(2) End the explanation with the sentinel shown in the format below.\n\
(3) The explanation should be a short paragraph.\n\
(4) On a new line, output \"Answer: Yes\" or \"Answer: No\".\n\
\n\
I/O Format\n\
Passage: {passage}\n\
Question: {question}\n\
Answer: {answer}\n\
Reasoning: <concise explanation not revealing the label> {sentinel}\n\
Answer: <Yes|No>\n",
        label = rec.label,
        passage = rec.passage,
        question = rec.question,
        answer = rec.answer,
        sentinel = END_OF_REASONING,
    )
}

/// Splits a teacher reply into `(reasoning, answer)`.
pub fn parse_teacher_reply(reply: &str) -> Option<(String, String)> {
    let (reasoning, tail) = reply.split_once(END_OF_REASONING)?;
    let reasoning = reasoning.trim();
    let reasoning = reasoning.strip_prefix("Reasoning:").unwrap_or(reasoning).trim();
    let answer = tail.lines().find_map(|l| l.trim().strip_prefix("Answer:"))?.trim();
    Some((reasoning.into(), answer.into()))
}

/// Outcome of joining teacher rationales back onto records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub joined: usize,
    /// Teacher answer disagreed with the gold label.
    pub dropped: usize,
    /// Record without a rationale, or rationale without a record.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherRationale {
    pub id: String,
    pub reasoning: String,
    pub answer: String,
}

/// Replaces each record's rationale with the teacher's. Records whose teacher
/// answer disagrees with the gold label are dropped.
pub fn join_rationales(
    records: &[(String, PromptedRecord)],
    rationales: &[TeacherRationale],
) -> (Vec<(String, PromptedRecord)>, JoinReport) {
    let mut report = JoinReport::default();
    let mut out = Vec::new();
    let mut used = alloc::vec![false; rationales.len()];
    for (id, rec) in records {
        match rationales.iter().position(|r| &r.id == id) {
            None => report.missing += 1,
            Some(i) => {
                used[i] = true;
                let r = &rationales[i];
                if r.answer.trim() != rec.label {
                    report.dropped += 1;
                    continue;
                }
                let reasoning = r.reasoning.replace(END_OF_REASONING, "").trim().to_string();
                out.push((id.clone(), PromptedRecord { reasoning, ..rec.clone() }));
                report.joined += 1;
            }
        }
    }
    report.missing += used.iter().filter(|&&u| !u).count();
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind, n: usize) -> TaskSpec {
        TaskSpec::new(kind, n, n, n, 11)
    }

    #[test]
    fn parity_examples() {
        let (r, l) = parity_teacher("0000", "even").unwrap();
        assert_eq!(l, YES);
        assert!(r.contains("e,e,e,e"), "{}", r);
        assert_eq!(parity_teacher("1", "even").unwrap().1, NO);
        assert!(parity_teacher("10x", "even").is_err());
    }

    #[test]
    fn chain_examples() {
        let (r, l) = chain_teacher("A>B. B>C.", "A>C").unwrap();
        assert_eq!(l, YES);
        assert_eq!(r, "A>B, B>C, therefore chain A,B,C");
        let (r, l) = chain_teacher("A>B. C>D.", "A>D").unwrap();
        assert_eq!(l, NO);
        assert_eq!(r, "A>B, then the path ends at B, so D is never reached");
        assert_eq!(chain_teacher("A>B.", "B>A").unwrap().0, "the path ends at B, so A is never reached");
    }

    #[test]
    fn generation_is_balanced_and_reproducible() {
        for kind in [TaskKind::Parity, TaskKind::ChainEntail] {
            let s = spec(kind, 40);
            let recs = gen_split(&s, Split::Train).unwrap();
            assert_eq!(recs.iter().filter(|r| r.label == YES).count(), 20);
            assert_eq!(recs, gen_split(&s, Split::Train).unwrap());
            assert_ne!(recs, gen_split(&s, Split::Val).unwrap());
            for r in &recs {
                assert!(!r.reasoning.contains(YES) && !r.reasoning.contains(NO), "{}", r.reasoning);
            }
        }
        assert!(gen_record(&spec(TaskKind::Parity, 3), Split::Train, 3).is_err());
    }

    #[test]
    fn unifiedqa_layout() {
        let rec = gen_record(&spec(TaskKind::ChainEntail, 2), Split::Train, 0).unwrap();
        let f = format_unifiedqa(&rec);
        assert!(f.input.ends_with("\nIs the answer correct Yes or No?"));
        assert_eq!(f.input.lines().count(), 4);
        assert_eq!(f.reason, format!("Reasoning: {}\nFinal Answer: {}", rec.reasoning, rec.label));
        let bare = PromptedRecord { reasoning: String::new(), ..rec.clone() };
        assert_eq!(format_unifiedqa(&bare).reason, format!("Final Answer: {}", rec.label));
        assert_eq!(parse_unifiedqa(&f.input), Some((rec.passage, rec.question, rec.answer)));
    }

    #[test]
    fn teacher_prompt_structure() {
        let rec = gen_record(&spec(TaskKind::Parity, 2), Split::Train, 1).unwrap();
        let p = emit_teacher_prompt(&rec);
        assert_eq!(p.matches(END_OF_REASONING).count(), 1);
        let format_section = p.split_once("I/O Format").unwrap().1;
        assert_eq!(format_section.matches(END_OF_REASONING).count(), 1);
        assert!(p.contains("Let's think step by step"));
        assert!(!p.contains(&rec.reasoning));
        assert!(p.contains(&format!("Passage: {}", rec.passage)));
    }

    #[test]
    fn teacher_reply_parsing() {
        let reply = "Reasoning: first this, then that. [END OF REASONING]\nAnswer: Yes";
        assert_eq!(parse_teacher_reply(reply), Some(("first this, then that.".into(), "Yes".into())));
        assert_eq!(parse_teacher_reply("no sentinel\nAnswer: No"), None);
    }

    #[test]
    fn join_counts() {
        let recs: Vec<(String, PromptedRecord)> =
            (0..10).map(|i| (format!("r{}", i), gen_record(&spec(TaskKind::Parity, 10), Split::Train, i).unwrap())).collect();
        let rats: Vec<TeacherRationale> = recs
            .iter()
            .enumerate()
            .map(|(i, (id, r))| TeacherRationale {
                id: id.clone(),
                reasoning: format!("because {}", i),
                answer: if i < 2 {
                    if r.label == YES {
                        NO.into()
                    } else {
                        YES.into()
                    }
                } else {
                    r.label.clone()
                },
            })
            .collect();
        let (out, rep) = join_rationales(&recs, &rats);
        assert_eq!(out.len(), 8);
        assert_eq!(rep, JoinReport { joined: 8, dropped: 2, missing: 0 });
        let other: Vec<TeacherRationale> = rats.iter().map(|r| TeacherRationale { id: format!("x{}", r.id), ..r.clone() }).collect();
        let (out, rep) = join_rationales(&recs, &other);
        assert!(out.is_empty());
        assert_eq!(rep.joined, 0);
        assert_eq!(rep.missing, 20);
    }
}
