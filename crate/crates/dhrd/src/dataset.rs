//! JSONL datasets, teacher-prompt export and rationale import.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use dhrd_core::datagen::{self, JoinReport, PromptedRecord, Split, TaskSpec, TeacherRationale};
use dhrd_core::sequences::{Example, LabelSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    #[serde(default)]
    pub id: String,
    pub input: String,
    #[serde(default)]
    pub reasoning: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<u64>,
    pub task_id: String,
}

impl Record {
    pub fn to_example(&self, labels: &LabelSet) -> Result<Example> {
        Ok(Example::from_text(&self.input, &self.reasoning, &self.label, labels, self.group_id, &self.task_id)?)
    }

    fn from_prompted(id: String, rec: &PromptedRecord, task_id: &str) -> Self {
        let f = datagen::format_unifiedqa(rec);
        Record { id, input: f.input, reasoning: rec.reasoning.clone(), label: f.label, group_id: None, task_id: task_id.into() }
    }

    /// Recovers the QA fields from the formatted input.
    pub fn to_prompted(&self) -> Option<PromptedRecord> {
        let (passage, question, answer) = datagen::parse_unifiedqa(&self.input)?;
        Some(PromptedRecord { passage, question, answer, reasoning: self.reasoning.clone(), label: self.label.clone() })
    }
}

pub fn record_id(spec: &TaskSpec, split: Split, index: usize) -> String {
    format!("{}-{}-{:06}", spec.kind.name(), split.name(), index)
}

pub fn generate(spec: &TaskSpec, split: Split) -> Result<Vec<Record>> {
    (0..spec.count(split))
        .map(|i| {
            let rec = datagen::gen_record(spec, split, i)?;
            Ok(Record::from_prompted(record_id(spec, split, i), &rec, spec.kind.name()))
        })
        .collect()
}

pub fn to_examples(records: &[Record], labels: &LabelSet) -> Result<Vec<Example>> {
    records.iter().map(|r| r.to_example(labels)).collect()
}

fn read_lines<T, P>(path: &Path, mut parse: P) -> Result<Vec<T>>
where
    P: FnMut(usize, &str) -> Result<T>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(i + 1, &line)?);
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::MalformedLine { path: path.to_path_buf(), line, reason: e.to_string() }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| malformed(path, 0, e))?;
        writeln!(w, "{}", line).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    read_lines(path, |n, line| serde_json::from_str(line).map_err(|e| malformed(path, n, e)))
}

pub fn write_dataset(path: &Path, records: &[Record]) -> Result<()> {
    write_lines(path, records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLine {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RationaleLine {
    #[serde(default)]
    id: Option<String>,
    reasoning: String,
    answer: String,
}

pub fn teacher_prompts(records: &[Record]) -> Result<Vec<PromptLine>> {
    records
        .iter()
        .map(|r| {
            let rec = r
                .to_prompted()
                .ok_or_else(|| Error::Core(dhrd_core::Error::InvalidExample(format!("{}: input is not in QA layout", r.id))))?;
            Ok(PromptLine { id: r.id.clone(), prompt: datagen::emit_teacher_prompt(&rec) })
        })
        .collect()
}

pub fn export_prompts(dataset: &Path, out: &Path) -> Result<usize> {
    let prompts = teacher_prompts(&read_dataset(dataset)?)?;
    write_lines(out, &prompts)?;
    Ok(prompts.len())
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptLine>> {
    read_lines(path, |n, line| serde_json::from_str(line).map_err(|e| malformed(path, n, e)))
}

pub fn read_rationales(path: &Path) -> Result<Vec<TeacherRationale>> {
    read_lines(path, |n, line| {
        let r: RationaleLine = serde_json::from_str(line).map_err(|e| malformed(path, n, e))?;
        match r.id {
            Some(id) if !id.is_empty() => Ok(TeacherRationale { id, reasoning: r.reasoning, answer: r.answer }),
            _ => Err(Error::MissingId { path: path.to_path_buf(), line: n }),
        }
    })
}

pub fn write_rationales(path: &Path, rationales: &[TeacherRationale]) -> Result<()> {
    let lines: Vec<RationaleLine> = rationales
        .iter()
        .map(|r| RationaleLine { id: Some(r.id.clone()), reasoning: r.reasoning.clone(), answer: r.answer.clone() })
        .collect();
    write_lines(path, &lines)
}

/// Joins teacher rationales onto a dataset by id; disagreeing records are dropped.
pub fn import_rationales(dataset: &Path, rationales: &Path) -> Result<(Vec<Record>, JoinReport)> {
    let records = read_dataset(dataset)?;
    let rats = read_rationales(rationales)?;
    let mut prompted = Vec::with_capacity(records.len());
    for r in &records {
        let p =
            r.to_prompted().ok_or_else(|| Error::Core(dhrd_core::Error::InvalidExample(format!("{}: input is not in QA layout", r.id))))?;
        prompted.push((r.id.clone(), p));
    }
    let (joined, report) = datagen::join_rationales(&prompted, &rats);
    let by_id: std::collections::HashMap<&str, &Record> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let out = joined
        .into_iter()
        .map(|(id, p)| {
            let orig = by_id[id.as_str()];
            Record { reasoning: p.reasoning, ..orig.clone() }
        })
        .collect();
    Ok((out, report))
}

/// Answers exported prompts with the synthetic oracle teacher.
pub fn oracle_answers(prompts: &[PromptLine]) -> Result<Vec<TeacherRationale>> {
    prompts
        .iter()
        .map(|p| {
            let section = p.prompt.split_once("I/O Format").map(|s| s.1).unwrap_or("");
            let field = |name: &str| section.lines().find_map(|l| l.strip_prefix(name)).map(str::to_string);
            let missing = || Error::Core(dhrd_core::Error::InvalidExample(format!("{}: prompt lacks QA fields", p.id)));
            let passage = field("Passage: ").ok_or_else(missing)?;
            let question = field("Question: ").ok_or_else(missing)?;
            let answer = field("Answer: ").ok_or_else(missing)?;
            let (reasoning, label) = datagen::oracle_teacher(&passage, &question, &answer)?;
            Ok(TeacherRationale { id: p.id.clone(), reasoning, answer: label })
        })
        .collect()
}
