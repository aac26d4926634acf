//! Multi-run drivers: the (β, α) weight grid and the rationale/label
//! alignment ablations, each averaged over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dhrd_core::losses::LossWeights;
use dhrd_core::metrics;
use dhrd_core::sequences::AblationKind;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::run::run_training;

/// `(beta, alpha)` pairs; the first row is the pooled baseline.
pub const SWEEP_GRID: [(f64, f64); 4] = [(1.0, 0.0), (1.0, 0.5), (1.0, 1.0), (0.5, 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    /// Final-epoch validation macro-average per seed.
    pub per_seed: Vec<(u64, f64)>,
}

impl RunSummary {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().map(|(_, v)| v).sum::<f64>() / self.per_seed.len() as f64
    }
}

fn train_seeds(cfg: &RunConfig, seeds: &[u64], out: &Path, label: &str) -> Result<RunSummary> {
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let outcome = run_training(&c, &out.join(label).join(format!("seed-{}", seed)))?;
        let v = outcome
            .final_macro()
            .ok_or_else(|| Error::Config { key: "data.n_val".into(), reason: "runs need a validation split".into() })?;
        per_seed.push((seed, v));
    }
    Ok(RunSummary { label: label.into(), per_seed })
}

fn per_seed_csv(rows: &[RunSummary], head: &str) -> String {
    let mut s = format!("{},seed,macro_avg\n", head);
    for r in rows {
        for (seed, v) in &r.per_seed {
            let _ = writeln!(s, "{},{},{}", r.label, seed, v);
        }
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub alpha: f64,
    pub summary: RunSummary,
    /// Percent change of the mean against the `(1, 0)` row.
    pub rel_delta: f64,
}

pub fn sweep(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows: Vec<SweepRow> = Vec::new();
    for (beta, alpha) in SWEEP_GRID {
        let mut c = cfg.clone();
        c.loss = LossWeights::new(alpha, beta)?;
        let summary = train_seeds(&c, seeds, out, &format!("beta{}-alpha{}", beta, alpha))?;
        rows.push(SweepRow { beta, alpha, summary, rel_delta: 0.0 });
    }
    let base = rows[0].summary.mean();
    for r in &mut rows {
        r.rel_delta = metrics::relative_delta(r.summary.mean(), base);
    }
    let summaries: Vec<RunSummary> = rows.iter().map(|r| r.summary.clone()).collect();
    write(&out.join("sweep_runs.csv"), &per_seed_csv(&summaries, "setting"))?;
    write(&out.join("sweep.csv"), &sweep_table(&rows))?;
    Ok(rows)
}

/// One row per (β, α) pair with the mean and the relative change in percent.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("beta,alpha,mean,rel_delta_pct\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.2},{:+.2}", r.beta, r.alpha, r.summary.mean(), r.rel_delta);
    }
    s
}

pub fn ablate(cfg: &RunConfig, settings: &[AblationKind], seeds: &[u64], out: &Path) -> Result<Vec<RunSummary>> {
    let mut rows = Vec::new();
    for &kind in settings {
        let mut c = cfg.clone();
        c.ablation = kind;
        rows.push(train_seeds(&c, seeds, out, kind.name())?);
    }
    write(&out.join("ablation_runs.csv"), &per_seed_csv(&rows, "setting"))?;
    let mut table = String::from("setting,mean\n");
    for r in &rows {
        let _ = writeln!(table, "{},{:.2}", r.label, r.mean());
    }
    write(&out.join("ablation.csv"), &table)?;
    Ok(rows)
}
