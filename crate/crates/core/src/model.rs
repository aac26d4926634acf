//! Decoder-only transformer with two heads over one trunk.
//!
//! * trunk: token + learned position embeddings, `n_layers` pre-norm blocks
//!   (causal multi-head attention, GELU feed-forward), final layer norm;
//! * classification head: `Linear → GELU → Linear` on the hidden state of the
//!   last input token, producing K logits;
//! * LM head: projection onto the token embedding matrix (weights tied).
//!
//! Parameter count, with `d = d_model`, `f = d_ff`, `h = mlp_hidden`:
//!
//! ```text
//! V·d + max_len·d + n_layers·(4d² + 2·d·f + 9d + f) + 2d + d·h + h + h·K + K
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, Purpose};
use crate::sampling::{self, DecodeSettings};
use crate::sequences::Example;
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{TokenId, PAD, VOCAB_SIZE};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub max_len: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 512,
            vocab_size: VOCAB_SIZE,
            num_classes: 2,
            max_len: 256,
            mlp_hidden: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key, reason: &str| Err(Error::Config { key, reason: reason.to_string() });
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("model.d_model", "must be a positive multiple of model.n_heads");
        }
        if self.num_classes < 2 {
            return bad("model.num_classes", "need at least two classes");
        }
        if self.vocab_size < VOCAB_SIZE {
            return bad("model.vocab_size", "must cover bytes plus reserved tokens (>= 259)");
        }
        if self.max_len == 0 || self.d_ff == 0 || self.mlp_hidden == 0 {
            return bad("model.max_len", "max_len, d_ff and mlp_hidden must be positive");
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, f, h) = (self.d_model, self.d_ff, self.mlp_hidden);
        self.vocab_size * d
            + self.max_len * d
            + self.n_layers * (4 * d * d + 2 * d * f + 9 * d + f)
            + 2 * d
            + d * h
            + h
            + h * self.num_classes
            + self.num_classes
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_record(&self) -> String {
        format!(
            "d_model={}\nn_layers={}\nn_heads={}\nd_ff={}\nvocab_size={}\nnum_classes={}\nmax_len={}\nmlp_hidden={}\nseed={}\n",
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.d_ff,
            self.vocab_size,
            self.num_classes,
            self.max_len,
            self.mlp_hidden,
            self.seed
        )
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config { key: "model", reason: format!("malformed line {:?}", line) })?;
            let num = |key: &'static str| -> Result<u64> {
                v.trim().parse().map_err(|_| Error::Config { key, reason: format!("not an integer: {:?}", v) })
            };
            match k.trim() {
                "d_model" => cfg.d_model = num("model.d_model")? as usize,
                "n_layers" => cfg.n_layers = num("model.n_layers")? as usize,
                "n_heads" => cfg.n_heads = num("model.n_heads")? as usize,
                "d_ff" => cfg.d_ff = num("model.d_ff")? as usize,
                "vocab_size" => cfg.vocab_size = num("model.vocab_size")? as usize,
                "num_classes" => cfg.num_classes = num("model.num_classes")? as usize,
                "max_len" => cfg.max_len = num("model.max_len")? as usize,
                "mlp_hidden" => cfg.mlp_hidden = num("model.mlp_hidden")? as usize,
                "seed" => cfg.seed = num("model.seed")?,
                other => return Err(Error::Config { key: "model", reason: format!("unknown key {:?}", other) }),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Embedding,
    Trunk,
    ClsHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Real> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// Biases and norm parameters are excluded from weight decay.
    pub decay: bool,
    pub part: Part,
}

const BLOCK_PARAMS: usize = 12;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const QKV_W: usize = 2;
const QKV_B: usize = 3;
const OUT_W: usize = 4;
const OUT_B: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const UP_W: usize = 8;
const UP_B: usize = 9;
const DOWN_W: usize = 10;
const DOWN_B: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadModel<F: Real> {
    config: ModelConfig,
    params: Vec<Param<F>>,
}

/// Parameters recorded on a tape, in the model's parameter order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<F: Real> DualHeadModel<F> {
    /// Normal(0, 0.02) weights, zero biases, unit norm gains; seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, Purpose::Init);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let (d, f, h) = (config.d_model, config.d_ff, config.mlp_hidden);
        let mut params = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init, decay: bool, part: Part, rng: &mut rng::Rng| {
            let numel: usize = shape.iter().product();
            let data: Vec<F> = match init {
                Init::Normal => (0..numel).map(|_| F::from_f64_lossy(normal.sample(rng))).collect(),
                Init::Zeros => alloc::vec![F::zero(); numel],
                Init::Ones => alloc::vec![F::one(); numel],
            };
            let tensor = Tensor::new(shape, data).expect("shape matches data").with_grad();
            params.push(Param { name, tensor, decay, part });
        };
        add("tok_emb".into(), alloc::vec![config.vocab_size, d], Init::Normal, true, Part::Embedding, &mut rng);
        add("pos_emb".into(), alloc::vec![config.max_len, d], Init::Normal, true, Part::Embedding, &mut rng);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("blocks.{}.{}", l, s);
            add(p("ln1.gain"), alloc::vec![d], Init::Ones, false, Part::Trunk, &mut rng);
            add(p("ln1.bias"), alloc::vec![d], Init::Zeros, false, Part::Trunk, &mut rng);
            add(p("attn.qkv.weight"), alloc::vec![d, 3 * d], Init::Normal, true, Part::Trunk, &mut rng);
            add(p("attn.qkv.bias"), alloc::vec![3 * d], Init::Zeros, false, Part::Trunk, &mut rng);
            add(p("attn.out.weight"), alloc::vec![d, d], Init::Normal, true, Part::Trunk, &mut rng);
            add(p("attn.out.bias"), alloc::vec![d], Init::Zeros, false, Part::Trunk, &mut rng);
            add(p("ln2.gain"), alloc::vec![d], Init::Ones, false, Part::Trunk, &mut rng);
            add(p("ln2.bias"), alloc::vec![d], Init::Zeros, false, Part::Trunk, &mut rng);
            add(p("ff.up.weight"), alloc::vec![d, f], Init::Normal, true, Part::Trunk, &mut rng);
            add(p("ff.up.bias"), alloc::vec![f], Init::Zeros, false, Part::Trunk, &mut rng);
            add(p("ff.down.weight"), alloc::vec![f, d], Init::Normal, true, Part::Trunk, &mut rng);
            add(p("ff.down.bias"), alloc::vec![d], Init::Zeros, false, Part::Trunk, &mut rng);
        }
        add("ln_f.gain".into(), alloc::vec![d], Init::Ones, false, Part::Trunk, &mut rng);
        add("ln_f.bias".into(), alloc::vec![d], Init::Zeros, false, Part::Trunk, &mut rng);
        add("cls.fc1.weight".into(), alloc::vec![d, h], Init::Normal, true, Part::ClsHead, &mut rng);
        add("cls.fc1.bias".into(), alloc::vec![h], Init::Zeros, false, Part::ClsHead, &mut rng);
        add("cls.fc2.weight".into(), alloc::vec![h, config.num_classes], Init::Normal, true, Part::ClsHead, &mut rng);
        add("cls.fc2.bias".into(), alloc::vec![config.num_classes], Init::Zeros, false, Part::ClsHead, &mut rng);
        Ok(DualHeadModel { config, params })
    }

    /// Rebuilds a model from named tensors (e.g. a checkpoint). Every
    /// expected parameter must be present with the expected shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut model = DualHeadModel::new(config)?;
        if named.len() != model.params.len() {
            return Err(Error::Config {
                key: "checkpoint",
                reason: format!("expected {} tensors, found {}", model.params.len(), named.len()),
            });
        }
        let mut seen = alloc::vec![false; model.params.len()];
        for (name, tensor) in named {
            let idx = model
                .params
                .iter()
                .position(|p| p.name == name)
                .filter(|&i| !seen[i])
                .ok_or_else(|| Error::Config { key: "checkpoint", reason: format!("unexpected or repeated tensor {:?}", name) })?;
            seen[idx] = true;
            let slot = &mut model.params[idx];
            if slot.tensor.shape() != tensor.shape() {
                return Err(Error::shape("checkpoint", format!("{}: {:?} vs {:?}", name, tensor.shape(), slot.tensor.shape())));
            }
            slot.tensor.data_mut().copy_from_slice(tensor.data());
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// FNV-1a over the bit patterns of every parameter value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for &v in p.tensor.data() {
                let bits = v.as_f64().to_bits();
                for byte in bits.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<Bound> {
        let vars = self.params.iter().map(|p| tape.leaf(&p.tensor)).collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Adds the gradients from a finished backward pass into the parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape<F>, bound: &Bound) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            tape.accumulate_into(v, &mut p.tensor)?;
        }
        Ok(())
    }

    fn block(&self, bound: &Bound, layer: usize, which: usize) -> Var {
        bound.vars[2 + layer * BLOCK_PARAMS + which]
    }

    fn tail(&self, bound: &Bound, which: usize) -> Var {
        bound.vars[2 + self.config.n_layers * BLOCK_PARAMS + which]
    }

    fn linear(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }

    /// Trunk hidden states `[batch × seq × d_model]` under causal and padding masks.
    pub fn forward_hidden(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        tokens: &[TokenId],
        pad_mask: &[u8],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        if seq > self.config.max_len {
            return Err(Error::SequenceTooLong { len: seq, max_len: self.config.max_len });
        }
        if tokens.len() != batch * seq || pad_mask.len() != batch * seq || batch == 0 || seq == 0 {
            return Err(Error::shape("forward_hidden", format!("{} tokens for batch {} × seq {}", tokens.len(), batch, seq)));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange { token: t, vocab: self.config.vocab_size });
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let key_mask: Vec<bool> = pad_mask.iter().map(|&m| m != 0).collect();
        let eps = F::from_f64_lossy(LAYER_NORM_EPS);

        let tok = tape.embedding(bound.vars[0], &ids, &[batch, seq])?;
        let pos = tape.embedding(bound.vars[1], &positions, &[batch, seq])?;
        let mut x = tape.add(tok, pos)?;
        for l in 0..self.config.n_layers {
            let h = tape.layer_norm(x, self.block(bound, l, LN1_G), self.block(bound, l, LN1_B), eps)?;
            let qkv = Self::linear(tape, h, self.block(bound, l, QKV_W), self.block(bound, l, QKV_B))?;
            let att = tape.causal_attention(qkv, batch, seq, self.config.n_heads, &key_mask)?;
            let o = Self::linear(tape, att, self.block(bound, l, OUT_W), self.block(bound, l, OUT_B))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, self.block(bound, l, LN2_G), self.block(bound, l, LN2_B), eps)?;
            let u = Self::linear(tape, h, self.block(bound, l, UP_W), self.block(bound, l, UP_B))?;
            let u = tape.gelu(u)?;
            let dn = Self::linear(tape, u, self.block(bound, l, DOWN_W), self.block(bound, l, DOWN_B))?;
            x = tape.add(x, dn)?;
        }
        tape.layer_norm(x, self.tail(bound, 0), self.tail(bound, 1), eps)
    }

    /// Class logits `[batch × K]` from the hidden state at each row's pool index.
    pub fn classify(&self, tape: &mut Tape<F>, bound: &Bound, hidden: Var, pool_indices: &[usize]) -> Result<Var> {
        let shape = tape.shape(hidden).to_vec();
        if shape.len() != 3 || shape[0] != pool_indices.len() {
            return Err(Error::shape("classify", format!("hidden {:?} with {} pool indices", shape, pool_indices.len())));
        }
        let seq = shape[1];
        let mut rows = Vec::with_capacity(pool_indices.len());
        for (b, &p) in pool_indices.iter().enumerate() {
            if p >= seq {
                return Err(Error::IndexOutOfRange { what: "pool index", index: p, size: seq });
            }
            rows.push(b * seq + p);
        }
        let pooled = tape.gather_rows(hidden, &rows)?;
        let h = Self::linear(tape, pooled, self.tail(bound, 2), self.tail(bound, 3))?;
        let h = tape.gelu(h)?;
        Self::linear(tape, h, self.tail(bound, 4), self.tail(bound, 5))
    }

    /// Next-token logits `[batch × seq × V]` through the tied embedding.
    pub fn lm_logits(&self, tape: &mut Tape<F>, bound: &Bound, hidden: Var) -> Result<Var> {
        tape.matmul_bt(hidden, bound.vars[0])
    }

    /// LM logits `[rows.len() × V]` for selected flat `(batch, position)`
    /// rows only; training uses it to skip unscored positions.
    pub fn lm_logits_at(&self, tape: &mut Tape<F>, bound: &Bound, hidden: Var, rows: &[usize]) -> Result<Var> {
        let h = tape.gather_rows(hidden, rows)?;
        tape.matmul_bt(h, bound.vars[0])
    }

    /// Value-only class logits for a padded token matrix.
    pub fn classify_tokens(
        &self,
        tokens: &[TokenId],
        pad_mask: &[u8],
        batch: usize,
        seq: usize,
        pool_indices: &[usize],
    ) -> Result<Tensor<F>> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape)?;
        let hidden = self.forward_hidden(&mut tape, &bound, tokens, pad_mask, batch, seq)?;
        let z = self.classify(&mut tape, &bound, hidden, pool_indices)?;
        Ok(tape.to_tensor(z))
    }

    /// Class logits for examples, computed on their inputs only.
    pub fn classify_examples(&self, examples: &[Example]) -> Result<Tensor<F>> {
        let batch = examples.len();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let seq = examples.iter().map(|e| e.x_tokens.len()).max().unwrap_or(0);
        let mut tokens = alloc::vec![PAD; batch * seq];
        let mut mask = alloc::vec![0u8; batch * seq];
        let mut pools = Vec::with_capacity(batch);
        for (i, e) in examples.iter().enumerate() {
            let (x, pool) = crate::sequences::inference_input(e);
            tokens[i * seq..i * seq + x.len()].copy_from_slice(&x);
            mask[i * seq..i * seq + x.len()].iter_mut().for_each(|m| *m = 1);
            pools.push(pool);
        }
        self.classify_tokens(&tokens, &mask, batch, seq, &pools)
    }

    /// Argmax class per example, processed in chunks of `batch_size`.
    pub fn predict(&self, examples: &[Example], batch_size: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let z = self.classify_examples(chunk)?;
            let k = self.config.num_classes;
            out.extend(z.data().chunks(k).map(sampling::argmax));
        }
        Ok(out)
    }

    /// Autoregressive sampling from the LM head. Stops at the stop token,
    /// after `max_new_tokens`, or when the context reaches `max_len`.
    /// Returns only the new tokens.
    pub fn generate<R: Rng + ?Sized>(&self, prefix: &[TokenId], settings: &DecodeSettings, rng: &mut R) -> Result<Vec<TokenId>> {
        if prefix.is_empty() || prefix.len() >= self.config.max_len {
            return Err(Error::PrefixTooLong { len: prefix.len(), max_len: self.config.max_len });
        }
        let mut ctx = prefix.to_vec();
        let mut out = Vec::new();
        while out.len() < settings.max_new_tokens && ctx.len() < self.config.max_len {
            let logits = self.next_token_logits(&ctx)?;
            let next = sampling::sample_next(&logits, settings, rng) as TokenId;
            ctx.push(next);
            out.push(next);
            if settings.stop_token == Some(next) {
                break;
            }
        }
        Ok(out)
    }

    /// LM logits at the last position of `ctx` (full recompute, no cache).
    pub fn next_token_logits(&self, ctx: &[TokenId]) -> Result<Vec<F>> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape)?;
        let mask = alloc::vec![1u8; ctx.len()];
        let hidden = self.forward_hidden(&mut tape, &bound, ctx, &mask, 1, ctx.len())?;
        let last = tape.gather_rows(hidden, &[ctx.len() - 1])?;
        let logits = tape.matmul_bt(last, bound.vars[0])?;
        Ok(tape.value(logits).to_vec())
    }
}

enum Init {
    Normal,
    Zeros,
    Ones,
}
