//! Throughput of the pooled classification path against token-by-token
//! decoding from the LM head, on the same model and records.

use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dhrd_core::model::DualHeadModel;
use dhrd_core::rng::{self, Purpose};
use dhrd_core::sampling::DecodeSettings;
use dhrd_core::sequences::{inference_input, Example};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Token budgets in the extrapolation table.
pub const EXTRAPOLATE_AT: [usize; 6] = [1, 32, 64, 128, 256, 500];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub qps: f64,
    /// Timed wall clock, warmup excluded.
    pub wall_clock_s: f64,
    pub n_samples: usize,
    /// Mean tokens emitted per sample (decoding only).
    pub tokens_per_sample: f64,
}

fn check(examples: &[Example], warmup: usize, reps: usize) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if warmup == 0 || reps == 0 {
        return Err(Error::Config { key: "bench.reps".into(), reason: "warmup and reps must be >= 1".into() });
    }
    Ok(())
}

/// Splits `items` over the available cores when `parallel` is set.
fn run_sharded<T, R, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> Result<R> + Sync,
{
    if !parallel {
        return Ok(vec![f(0, items)?]);
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len()).max(1);
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(i, c)| {
                let f = &f;
                s.spawn(move || f(i, c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    })
}

/// `reps` timed passes of batched forward + classify over all records.
pub fn bench_classify(
    model: &DualHeadModel<f32>,
    examples: &[Example],
    batch: usize,
    warmup: usize,
    reps: usize,
    parallel: bool,
) -> Result<Timing> {
    check(examples, warmup, reps)?;
    let pass = || run_sharded(examples, parallel, |_, part| Ok(model.predict(part, batch)?.len()));
    for _ in 0..warmup {
        pass()?;
    }
    let start = Instant::now();
    for _ in 0..reps {
        pass()?;
    }
    let wall = start.elapsed().as_secs_f64();
    let n = examples.len();
    Ok(Timing { qps: (reps * n) as f64 / wall, wall_clock_s: wall, n_samples: n, tokens_per_sample: 0.0 })
}

/// `reps` timed passes generating a continuation for every record.
pub fn bench_decode(
    model: &DualHeadModel<f32>,
    examples: &[Example],
    settings: &DecodeSettings,
    warmup: usize,
    reps: usize,
    seed: u64,
    parallel: bool,
) -> Result<Timing> {
    check(examples, warmup, reps)?;
    settings.validate()?;
    let pass = |rep: usize| -> Result<usize> {
        let counts = run_sharded(examples, parallel, |shard, part| {
            let mut r = rng::stream(rng::mix(seed, (rep * 1024 + shard) as u64), Purpose::Sampling);
            let mut tokens = 0;
            for e in part {
                tokens += model.generate(&inference_input(e).0, settings, &mut r)?.len();
            }
            Ok(tokens)
        })?;
        Ok(counts.into_iter().sum())
    };
    for w in 0..warmup {
        pass(w)?;
    }
    let start = Instant::now();
    let mut tokens = 0;
    for rep in 0..reps {
        tokens += pass(warmup + rep)?;
    }
    let wall = start.elapsed().as_secs_f64();
    let n = examples.len();
    Ok(Timing { qps: (reps * n) as f64 / wall, wall_clock_s: wall, n_samples: n, tokens_per_sample: tokens as f64 / (reps * n) as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeSettingsRecord {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub stop_token: Option<u32>,
}

impl From<&DecodeSettings> for DecodeSettingsRecord {
    fn from(s: &DecodeSettings) -> Self {
        DecodeSettingsRecord { temperature: s.temperature, top_p: s.top_p, max_new_tokens: s.max_new_tokens, stop_token: s.stop_token }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub qps_classify: f64,
    pub qps_decode: f64,
    pub speedup: f64,
    pub n_samples: usize,
    pub n_samples_decode: usize,
    pub wall_clock_s: f64,
    pub decode_settings: DecodeSettingsRecord,
    pub tokens_per_sample: f64,
    /// `(tokens, projected speedup)` at a constant measured cost per decoded token.
    pub extrapolated: Vec<(usize, f64)>,
    pub parallel: bool,
    pub params_unchanged: bool,
    pub config_hash: String,
    pub data_hash: String,
    pub timestamp: u64,
}

impl BenchReport {
    pub fn assemble(
        classify: &Timing,
        decode: &Timing,
        settings: &DecodeSettings,
        parallel: bool,
        params_unchanged: bool,
        config_hash: String,
        data_hash: String,
    ) -> Self {
        let speedup = classify.qps / decode.qps;
        // seconds per decoded token, then projected per-sample decode time at T tokens
        let per_token = if decode.tokens_per_sample > 0.0 { 1.0 / (decode.qps * decode.tokens_per_sample) } else { 0.0 };
        let extrapolated = EXTRAPOLATE_AT.iter().map(|&t| (t, classify.qps * per_token * t as f64)).collect();
        BenchReport {
            qps_classify: classify.qps,
            qps_decode: decode.qps,
            speedup,
            n_samples: classify.n_samples,
            n_samples_decode: decode.n_samples,
            wall_clock_s: classify.wall_clock_s + decode.wall_clock_s,
            decode_settings: settings.into(),
            tokens_per_sample: decode.tokens_per_sample,
            extrapolated,
            parallel,
            params_unchanged,
            config_hash,
            data_hash,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn append_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(self).expect("report serializes");
        writeln!(f, "{}", line).map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object id: SHA-256 over `"blob <len>\0" ++ content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}
