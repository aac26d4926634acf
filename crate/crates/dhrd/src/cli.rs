//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use dhrd_core::datagen::Split;
use dhrd_core::model::DualHeadModel;
use dhrd_core::sequences::AblationKind;

use crate::bench::{self, BenchReport};
use crate::checkpoint;
use crate::config::{self, RunConfig};
use crate::dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::run::{self, run_training};
use crate::sweep;

#[derive(Debug, Parser)]
#[command(name = "dhrd", version, about = "Dual-head reasoning distillation: train a pooled classifier with a train-only reasoning head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config sources, applied in order: defaults, `--config`, `--set`, then the
/// dedicated flags.
#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// key=value config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override any config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Weight of the reasoning loss (loss.alpha)
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the classification loss (loss.beta)
    #[arg(long)]
    beta: Option<f64>,
    /// Alignment ablation (ablation.setting)
    #[arg(long)]
    setting: Option<String>,
    /// Root seed (seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic task: parity | chain (data.task)
    #[arg(long)]
    task: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic train/val/test JSONL splits
    Gen {
        #[command(flatten)]
        common: Common,
        /// Training records (data.n_train); --seed sets the generator seed
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Write guarded teacher prompts ({id, prompt} JSONL) for a dataset
    ExportPrompts {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Join teacher rationales ({id, reasoning, answer} JSONL) onto a dataset
    ImportRationales {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        rationales: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Answer exported prompts with the built-in synthetic oracle teacher
    OracleTeacher {
        #[arg(long, value_name = "PATH")]
        prompts: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train one model
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a dataset
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// JSONL to score; defaults to the configured validation split
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Also score generate-then-parse predictions from the reasoning head
        #[arg(long)]
        cot: bool,
    },
    /// Train every alignment ablation over several seeds
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Train the (beta, alpha) grid over several seeds and report Rel-Δ
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Classification vs decoding throughput
    Bench {
        #[command(flatten)]
        common: Common,
        /// Model to benchmark; a freshly initialized one when omitted
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config { key: kv.clone(), reason: "expected KEY=VALUE".into() })?;
        cfg.set(k, v)?;
    }
    if let Some(t) = &common.task {
        cfg.set("data.task", t)?;
    }
    if let Some(a) = common.alpha {
        cfg.loss.alpha = a;
    }
    if let Some(b) = common.beta {
        cfg.loss.beta = b;
    }
    if let Some(s) = &common.setting {
        cfg.set("ablation.setting", s)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen(common: &Common, n: Option<usize>, n_val: Option<usize>, n_test: Option<usize>) -> Result<String> {
    let mut cfg = resolve(common)?;
    if let Some(s) = common.seed {
        cfg.data.seed = s;
    }
    if let Some(n) = n {
        cfg.data.n_train = n;
    }
    if let Some(n) = n_val {
        cfg.data.n_val = n;
    }
    if let Some(n) = n_test {
        cfg.data.n_test = n;
    }
    let spec = cfg.data.task_spec();
    spec.validate()?;
    mkdir(&common.out)?;
    let mut msg = String::new();
    for split in Split::ALL {
        if spec.count(split) == 0 {
            continue;
        }
        let path = common.out.join(format!("{}.jsonl", split.name()));
        dataset::write_dataset(&path, &dataset::generate(&spec, split)?)?;
        let _ = writeln!(msg, "wrote {} ({} records)", path.display(), spec.count(split));
    }
    write(&common.out.join("config.txt"), &cfg.to_text())?;
    Ok(msg)
}

fn eval_cmd(common: &Common, ckpt: &Path, data: Option<&Path>, cot: bool) -> Result<String> {
    let cfg = resolve(common)?;
    let model = checkpoint::load(ckpt)?;
    let records = match data {
        Some(p) => dataset::read_dataset(p)?,
        None => run::load_splits(&cfg)?.1,
    };
    let labels = run::label_set(&records)?;
    let examples = dataset::to_examples(&records, &labels)?;
    mkdir(&common.out)?;
    let scores = eval::evaluate(&model, &examples, &labels, cfg.eval_batch)?;
    eval::write_scores(&common.out.join("scores.csv"), &scores)?;
    let mut msg = eval::scores_csv(&scores)?;
    if cot {
        let c = eval::evaluate_cot(&model, &examples, &labels, &cfg.decode, cfg.seed)?;
        eval::write_scores(&common.out.join("scores_cot.csv"), &c.scores)?;
        let _ = writeln!(msg, "generate-then-parse: {} unparseable of {}", c.unparseable, examples.len());
        msg.push_str(&eval::scores_csv(&c.scores)?);
    }
    write(&common.out.join("config.txt"), &cfg.to_text())?;
    Ok(msg)
}

fn bench_cmd(common: &Common, ckpt: Option<&Path>) -> Result<String> {
    let cfg = resolve(common)?;
    let model = match ckpt {
        Some(p) => checkpoint::load(p)?,
        None => DualHeadModel::new(cfg.model.clone())?,
    };
    let records = run::load_splits(&cfg)?.1;
    let labels = run::label_set(&records)?;
    let n = cfg.bench.n_classify.min(records.len());
    let records = &records[..n];
    let examples = dataset::to_examples(records, &labels)?;
    let decode_set = &examples[..cfg.bench.n_decode.min(n)];
    let before = model.checksum();
    let b = &cfg.bench;
    let c = bench::bench_classify(&model, &examples, cfg.eval_batch, b.warmup, b.reps, b.parallel)?;
    let d = bench::bench_decode(&model, decode_set, &cfg.decode, b.warmup, b.reps, cfg.seed, b.parallel)?;
    let unchanged = model.checksum() == before;
    let data: String = records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect();
    let report = BenchReport::assemble(
        &c,
        &d,
        &cfg.decode,
        b.parallel,
        unchanged,
        bench::sha256_hex(model.config().to_record().as_bytes()),
        bench::git_blob_hash(data.as_bytes()),
    );
    mkdir(&common.out)?;
    report.append_jsonl(&common.out.join("bench.jsonl"))?;
    write(&common.out.join("config.txt"), &cfg.to_text())?;
    let mut msg = format!(
        "classify {:.2} qps, decode {:.3} qps ({:.1} tokens/sample), speedup {:.1}x\ntokens,projected_speedup\n",
        report.qps_classify, report.qps_decode, report.tokens_per_sample, report.speedup
    );
    for (t, s) in &report.extrapolated {
        let _ = writeln!(msg, "{},{:.1}", t, s);
    }
    Ok(msg)
}

fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Gen { common, n, n_val, n_test } => gen(&common, n, n_val, n_test),
        Command::ExportPrompts { dataset: d, out } => {
            let n = dataset::export_prompts(&d, &out)?;
            Ok(format!("wrote {} prompts to {}\n", n, out.display()))
        }
        Command::ImportRationales { dataset: d, rationales, out } => {
            let (records, report) = dataset::import_rationales(&d, &rationales)?;
            dataset::write_dataset(&out, &records)?;
            Ok(format!("joined {}, dropped {}, missing {}\n", report.joined, report.dropped, report.missing))
        }
        Command::OracleTeacher { prompts, out } => {
            let answers = dataset::oracle_answers(&dataset::read_prompts(&prompts)?)?;
            dataset::write_rationales(&out, &answers)?;
            Ok(format!("answered {} prompts\n", answers.len()))
        }
        Command::Train { common } => {
            let cfg = resolve(&common)?;
            let o = run_training(&cfg, &common.out)?;
            let mut msg = String::new();
            for (epoch, scores) in &o.history {
                let m = dhrd_core::metrics::macro_average(scores)?;
                let _ = writeln!(msg, "epoch {} val macro_avg {:.2}", epoch, m);
            }
            let _ = writeln!(msg, "best: {}", o.best_checkpoint.display());
            Ok(msg)
        }
        Command::Eval { common, checkpoint, dataset: d, cot } => eval_cmd(&common, &checkpoint, d.as_deref(), cot),
        Command::Ablate { common, seeds } => {
            let cfg = resolve(&common)?;
            let settings: Vec<AblationKind> = match &common.setting {
                Some(_) => vec![cfg.ablation],
                None => AblationKind::ALL.to_vec(),
            };
            let rows = sweep::ablate(&cfg, &settings, &seeds, &common.out)?;
            let mut msg = String::from("setting,mean\n");
            for r in rows {
                let _ = writeln!(msg, "{},{:.2}", r.label, r.mean());
            }
            Ok(msg)
        }
        Command::Sweep { common, seeds } => {
            let cfg = resolve(&common)?;
            Ok(sweep::sweep_table(&sweep::sweep(&cfg, &seeds, &common.out)?))
        }
        Command::Bench { common, checkpoint } => bench_cmd(&common, checkpoint.as_deref()),
    }
}

pub fn command() -> clap::Command {
    let keys = config::keys_help();
    let cmd = Cli::command().after_long_help(keys.clone());
    cmd.mut_subcommands(|s| s.after_long_help(keys.clone()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(msg) => {
            print!("{}", msg);
            0
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {}\n\n{}", e, command().render_usage());
            1
        }
        Err(e) => {
            eprintln!("error: {}", e);
            2
        }
    }
}
