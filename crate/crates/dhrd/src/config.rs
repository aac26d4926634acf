//! Flat `key=value` run configuration.
//!
//! One key per line, `#` starts a comment. Unknown keys are rejected.
//! `seed` is the root seed: model init, data order, ablation shuffles and
//! sampling all derive their own stream from it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dhrd_core::datagen::{TaskKind, TaskSpec};
use dhrd_core::losses::LossWeights;
use dhrd_core::model::ModelConfig;
use dhrd_core::optim::OptimConfig;
use dhrd_core::sampling::DecodeSettings;
use dhrd_core::sequences::AblationKind;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub task: TaskKind,
    pub difficulty: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Seed of the synthetic generator; independent of the run seed so that
    /// runs with different seeds see the same data.
    pub seed: u64,
    /// JSONL files; when unset the split is generated in memory.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Whether the LM loss also scores the label tokens.
    pub lm_covers_label: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            task: TaskKind::ChainEntail,
            difficulty: TaskKind::ChainEntail.default_difficulty(),
            n_train: 5000,
            n_val: 1000,
            n_test: 1000,
            seed: 0,
            train: None,
            val: None,
            lm_covers_label: true,
        }
    }
}

impl DataConfig {
    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            difficulty: self.difficulty,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub reps: usize,
    pub n_classify: usize,
    pub n_decode: usize,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { warmup: 3, reps: 10, n_classify: 64, n_decode: 4, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub loss: LossWeights,
    pub ablation: AblationKind,
    pub decode: DecodeSettings,
    pub bench: BenchConfig,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            loss: LossWeights::DHRD,
            ablation: AblationKind::ConsistentReasoningLabel,
            decode: DecodeSettings { max_new_tokens: 128, ..DecodeSettings::REFERENCE },
            bench: BenchConfig::default(),
            eval_batch: 32,
            seed: 0,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for init, data order, ablation shuffles and sampling"),
    ("model.d_model", "embedding width"),
    ("model.n_layers", "decoder blocks"),
    ("model.n_heads", "attention heads (must divide d_model)"),
    ("model.d_ff", "feed-forward width"),
    ("model.vocab_size", "vocabulary size (>= 259)"),
    ("model.num_classes", "classification classes K"),
    ("model.max_len", "maximum sequence length"),
    ("model.mlp_hidden", "classification head hidden width"),
    ("optim.lr", "peak learning rate"),
    ("optim.weight_decay", "decoupled weight decay"),
    ("optim.beta1", "AdamW first-moment decay"),
    ("optim.beta2", "AdamW second-moment decay"),
    ("optim.eps", "AdamW epsilon"),
    ("optim.warmup_steps", "linear warmup updates"),
    ("optim.total_steps", "updates in the run; 0 derives it from epochs and data size"),
    ("optim.grad_accum", "micro-batches per update"),
    ("optim.micro_batch", "sequences per micro-batch"),
    ("optim.epochs", "passes over the training split"),
    ("data.task", "synthetic task: parity | chain"),
    ("data.difficulty", "bits for parity, chain symbols for chain"),
    ("data.n_train", "generated training records"),
    ("data.n_val", "generated validation records"),
    ("data.n_test", "generated test records"),
    ("data.seed", "generator seed (independent of the run seed)"),
    ("data.train", "training JSONL; overrides generation"),
    ("data.val", "validation JSONL; overrides generation"),
    ("data.lm_covers_label", "score label tokens in the LM loss: true | false"),
    ("loss.alpha", "weight of the reasoning (LM) loss"),
    ("loss.beta", "weight of the classification loss"),
    ("ablation.setting", "ConsistentReasoningLabel | OnlyLabel | ShuffleReasoning | ShuffleReasoningLabel"),
    ("decode.temperature", "sampling temperature"),
    ("decode.top_p", "nucleus mass"),
    ("decode.max_new_tokens", "generation budget"),
    ("bench.warmup", "untimed passes"),
    ("bench.reps", "timed passes"),
    ("bench.n_classify", "records in the classification benchmark"),
    ("bench.n_decode", "records in the decoding benchmark"),
    ("bench.parallel", "run the benchmark across threads: true | false"),
    ("eval.batch", "evaluation batch size"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Config keys (key=value in --config files, or --set key=value):\n");
    for (k, d) in KEYS {
        let _ = writeln!(s, "  {:<24} {}", k, d);
    }
    s
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config { key: key.into(), reason: format!("cannot parse {:?}", value) })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(Error::Config { key: key.into(), reason: format!("expected true or false, got {:?}", v) }),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "model.d_model" => self.model.d_model = parse(key, v)?,
            "model.n_layers" => self.model.n_layers = parse(key, v)?,
            "model.n_heads" => self.model.n_heads = parse(key, v)?,
            "model.d_ff" => self.model.d_ff = parse(key, v)?,
            "model.vocab_size" => self.model.vocab_size = parse(key, v)?,
            "model.num_classes" => self.model.num_classes = parse(key, v)?,
            "model.max_len" => self.model.max_len = parse(key, v)?,
            "model.mlp_hidden" => self.model.mlp_hidden = parse(key, v)?,
            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "optim.warmup_steps" => self.optim.warmup_steps = parse(key, v)?,
            "optim.total_steps" => self.optim.total_steps = parse(key, v)?,
            "optim.grad_accum" => self.optim.grad_accum = parse(key, v)?,
            "optim.micro_batch" => self.optim.micro_batch = parse(key, v)?,
            "optim.epochs" => self.optim.epochs = parse(key, v)?,
            "data.task" => {
                self.data.task =
                    TaskKind::parse(v).ok_or_else(|| Error::Config { key: key.into(), reason: format!("unknown task {:?}", v) })?;
                self.data.difficulty = self.data.task.default_difficulty();
            }
            "data.difficulty" => self.data.difficulty = parse(key, v)?,
            "data.n_train" => self.data.n_train = parse(key, v)?,
            "data.n_val" => self.data.n_val = parse(key, v)?,
            "data.n_test" => self.data.n_test = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            "data.train" => self.data.train = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.val" => self.data.val = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.lm_covers_label" => self.data.lm_covers_label = parse_bool(key, v)?,
            "loss.alpha" => self.loss.alpha = parse(key, v)?,
            "loss.beta" => self.loss.beta = parse(key, v)?,
            "ablation.setting" => {
                self.ablation =
                    AblationKind::parse(v).ok_or_else(|| Error::Config { key: key.into(), reason: format!("unknown setting {:?}", v) })?
            }
            "decode.temperature" => self.decode.temperature = parse(key, v)?,
            "decode.top_p" => self.decode.top_p = parse(key, v)?,
            "decode.max_new_tokens" => self.decode.max_new_tokens = parse(key, v)?,
            "bench.warmup" => self.bench.warmup = parse(key, v)?,
            "bench.reps" => self.bench.reps = parse(key, v)?,
            "bench.n_classify" => self.bench.n_classify = parse(key, v)?,
            "bench.n_decode" => self.bench.n_decode = parse(key, v)?,
            "bench.parallel" => self.bench.parallel = parse_bool(key, v)?,
            "eval.batch" => self.eval_batch = parse(key, v)?,
            other => return Err(Error::Config { key: other.into(), reason: "unknown key".into() }),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { key: format!("line {}", n + 1), reason: format!("expected key=value, got {:?}", raw) })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Propagates the root seed into the sub-configs and checks every value.
    pub fn resolve(&mut self) -> Result<()> {
        self.model.seed = self.seed;
        self.optim.seed = self.seed;
        if self.data.train.is_none() {
            self.data.task_spec().validate()?;
        }
        self.model.validate()?;
        // total steps depend on the data and warmup is clamped to them later
        OptimConfig { total_steps: usize::MAX, ..self.optim.clone() }.validate()?;
        self.loss.validate()?;
        self.decode.validate()?;
        if self.eval_batch == 0 {
            return Err(Error::Config { key: "eval.batch".into(), reason: "must be >= 1".into() });
        }
        if self.bench.warmup == 0 {
            return Err(Error::Config { key: "bench.warmup".into(), reason: "must be >= 1".into() });
        }
        if self.bench.reps == 0 {
            return Err(Error::Config { key: "bench.reps".into(), reason: "must be >= 1".into() });
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let m = &self.model;
        let o = &self.optim;
        let d = &self.data;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{}={}", k, v);
        };
        kv("seed", self.seed.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.n_layers", m.n_layers.to_string());
        kv("model.n_heads", m.n_heads.to_string());
        kv("model.d_ff", m.d_ff.to_string());
        kv("model.vocab_size", m.vocab_size.to_string());
        kv("model.num_classes", m.num_classes.to_string());
        kv("model.max_len", m.max_len.to_string());
        kv("model.mlp_hidden", m.mlp_hidden.to_string());
        kv("optim.lr", format!("{:?}", o.lr));
        kv("optim.weight_decay", format!("{:?}", o.weight_decay));
        kv("optim.beta1", format!("{:?}", o.beta1));
        kv("optim.beta2", format!("{:?}", o.beta2));
        kv("optim.eps", format!("{:?}", o.eps));
        kv("optim.warmup_steps", o.warmup_steps.to_string());
        kv("optim.total_steps", o.total_steps.to_string());
        kv("optim.grad_accum", o.grad_accum.to_string());
        kv("optim.micro_batch", o.micro_batch.to_string());
        kv("optim.epochs", o.epochs.to_string());
        kv("data.task", d.task.name().into());
        kv("data.difficulty", d.difficulty.to_string());
        kv("data.n_train", d.n_train.to_string());
        kv("data.n_val", d.n_val.to_string());
        kv("data.n_test", d.n_test.to_string());
        kv("data.seed", d.seed.to_string());
        kv("data.train", path(&d.train));
        kv("data.val", path(&d.val));
        kv("data.lm_covers_label", d.lm_covers_label.to_string());
        kv("loss.alpha", format!("{:?}", self.loss.alpha));
        kv("loss.beta", format!("{:?}", self.loss.beta));
        kv("ablation.setting", self.ablation.name().into());
        kv("decode.temperature", format!("{:?}", self.decode.temperature));
        kv("decode.top_p", format!("{:?}", self.decode.top_p));
        kv("decode.max_new_tokens", self.decode.max_new_tokens.to_string());
        kv("bench.warmup", self.bench.warmup.to_string());
        kv("bench.reps", self.bench.reps.to_string());
        kv("bench.n_classify", self.bench.n_classify.to_string());
        kv("bench.n_decode", self.bench.n_decode.to_string());
        kv("bench.parallel", self.bench.parallel.to_string());
        kv("eval.batch", self.eval_batch.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("loss.alpha", "0.5").unwrap();
        c.set("data.task", "parity").unwrap();
        c.set("data.train", "/tmp/x.jsonl").unwrap();
        c.set("ablation.setting", "onlylabel").unwrap();
        assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_documented_key_is_accepted_and_emitted() {
        let text = RunConfig::default().to_text();
        for (k, _) in KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{}=", k))), "{}", k);
        }
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn bad_input_names_the_key() {
        let err = RunConfig::parse_text("optim.lr=abc").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "optim.lr"));
        let err = RunConfig::parse_text("optim.nope=1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "optim.nope"));
        assert!(RunConfig::parse_text("just words").is_err());
        let c = RunConfig::parse_text("# comment\n\nseed=9 # trailing\n").unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn resolve_propagates_seed() {
        let mut c = RunConfig::parse_text("seed=42").unwrap();
        c.resolve().unwrap();
        assert_eq!(c.model.seed, 42);
        assert_eq!(c.optim.seed, 42);
        let mut bad = RunConfig::parse_text("loss.alpha=0\nloss.beta=0").unwrap();
        assert!(bad.resolve().is_err());
    }
}
