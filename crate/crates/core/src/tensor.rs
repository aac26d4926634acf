//! Dense tensors and a reverse-mode tape.
//!
//! Ops are coarse (whole matmuls, fused causal attention, fused masked
//! cross-entropy) so that the tape stays short and every backward rule can be
//! checked against finite differences. Tensors are row-major; every op treats
//! the last dimension as columns and all leading dimensions as rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{Real, View, ViewMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Real> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", format!("shape {:?} holds {} elements, data has {}", shape, numel, data.len())));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![F::zero(); numel], grad: None, requires_grad: false }
    }

    pub fn scalar(value: F) -> Self {
        Tensor { shape: Vec::new(), data: vec![value], grad: None, requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[F]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", format!("gradient has {} elements, tensor has {}", g.len(), self.data.len())));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn scale_grad(&mut self, c: F) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    AddRowBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: F },
    Sum { x: Var },
    Gelu { x: Var, tanh: Vec<F> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, rows: Vec<usize> },
    CausalAttention { qkv: Var, batch: usize, seq: usize, heads: usize, probs: Vec<F> },
    SoftmaxRows { x: Var },
    NllRows { logits: Var, targets: Vec<usize>, weights: Vec<F>, probs: Vec<F> },
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Ordered record of executed ops. Inputs always precede the ops that use
/// them, so a reverse sweep is a valid topological order. A tape supports a
/// single backward pass; any further use returns [`Error::TapeConsumed`].
#[derive(Debug)]
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    consumed: bool,
    grad_enabled: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&cols, lead)) => (lead.iter().product(), cols),
        None => (1, 1),
    }
}

#[allow(clippy::eq_op)]
fn check_finite<F: Real>(op: &'static str, values: &[F]) -> Result<()> {
    // v - v is 0 for finite v and NaN otherwise; lane-wise sums vectorize
    const LANES: usize = 16;
    let mut acc = [F::zero(); LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            acc[i] += c[i] - c[i];
        }
    }
    for (a, &v) in acc.iter_mut().zip(tail) {
        *a += v - v;
    }
    if acc.iter().all(|a| *a == F::zero()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false, grad_enabled: true }
    }

    /// A tape that records values only; nothing is saved for backward.
    pub fn inference() -> Self {
        Tape { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor { shape: n.shape.clone(), data: n.value.clone(), grad: None, requires_grad: false }
    }

    pub fn scalar_value(&self, v: Var) -> Result<F> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::NotScalar { numel: n.value.len() });
        }
        Ok(n.value[0])
    }

    /// Gradient of the last backward pass with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.grad_enabled && self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, value: Vec<F>, kind: Op<F>, needs_grad: bool) -> Result<Var> {
        check_finite(op, &value)?;
        self.nodes.push(Node { shape, value, op: kind, needs_grad: needs_grad && self.grad_enabled });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as an input. It participates in backward iff it requires grad.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Result<Var> {
        self.live()?;
        self.push("leaf", t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<F>) -> Result<Var> {
        self.live()?;
        let t = Tensor::new(shape, data)?;
        self.push("constant", t.shape, t.data, Op::Leaf, false)
    }

    /// `a[..×k] @ b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[..×k] @ b[n×k]ᵀ`, used for the tied LM projection.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        self.live()?;
        let (m, k) = rows_cols(&self.nodes[a.0].shape);
        let bs = &self.nodes[b.0].shape;
        if bs.len() != 2 || self.nodes[a.0].shape.is_empty() {
            return Err(Error::shape("matmul", format!("operands {:?} and {:?}", self.nodes[a.0].shape, bs)));
        }
        let (kb, n) = if trans_b { (bs[1], bs[0]) } else { (bs[0], bs[1]) };
        if kb != k {
            return Err(Error::shape("matmul", format!("inner dims {} vs {}", k, kb)));
        }
        let mut out = vec![F::zero(); m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            let bview = if trans_b { View::transposed(bv, 0, k) } else { View::rows(bv, 0, n) };
            F::gemm(m, k, n, F::one(), View::rows(av, 0, k), bview, F::zero(), ViewMut::rows(&mut out, 0, n));
        }
        let mut shape = self.nodes[a.0].shape.clone();
        *shape.last_mut().unwrap() = n;
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", shape, out, Op::MatMul { a, b, trans_b }, ng)
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.live()?;
        let (_, cols) = rows_cols(&self.nodes[x.0].shape);
        if self.nodes[bias.0].value.len() != cols || self.nodes[bias.0].shape.len() != 1 {
            return Err(Error::shape("add_row_bias", format!("bias {:?} vs cols {}", self.nodes[bias.0].shape, cols)));
        }
        let bv = &self.nodes[bias.0].value;
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_mut(cols) {
            add_into(row, bv);
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_row_bias", shape, out, Op::AddRowBias { x, bias }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.same_shape("add", a, b)?;
        let out: Vec<F> = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push("add", shape, out, Op::Add { a, b }, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        self.same_shape("mul", a, b)?;
        let out: Vec<F> = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", shape, out, Op::Mul { a, b }, ng)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        self.live()?;
        let out: Vec<F> = self.nodes[x.0].value.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push("scale", shape, out, Op::Scale { x, c }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let s: F = self.nodes[x.0].value.iter().copied().sum();
        let ng = self.needs(x);
        self.push("sum", Vec::new(), vec![s], Op::Sum { x }, ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let c = F::from_f64_lossy(GELU_C);
        let a = F::from_f64_lossy(GELU_A);
        let half = F::from_f64_lossy(0.5);
        let xv = &self.nodes[x.0].value;
        let tanh: Vec<F> = xv.iter().map(|&v| fast_tanh(c * (v + a * v * v * v))).collect();
        let out: Vec<F> = xv.iter().zip(&tanh).map(|(&v, &t)| half * v * (F::one() + t)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        let tanh = if ng { tanh } else { Vec::new() };
        self.push("gelu", shape, out, Op::Gelu { x, tanh }, ng)
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        self.live()?;
        let (rows, d) = rows_cols(&self.nodes[x.0].shape);
        if d == 0 || self.nodes[gain.0].value.len() != d || self.nodes[bias.0].value.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("width {} with gain {:?}, bias {:?}", d, self.nodes[gain.0].shape, self.nodes[bias.0].shape),
            ));
        }
        if eps <= F::zero() {
            return Err(Error::Config { key: "eps", reason: "layer_norm eps must be positive".into() });
        }
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let dn = F::from_usize(d).unwrap();
        let mut out = vec![F::zero(); rows * d];
        let mut xhat = vec![F::zero(); rows * d];
        let mut rstd = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        let (xhat, rstd) = if ng { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng)
    }

    /// Gathers rows of `table[V×d]`; output shape is `lead ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], lead: &[usize]) -> Result<Var> {
        self.live()?;
        let ts = &self.nodes[table.0].shape;
        if ts.len() != 2 || lead.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", format!("table {:?}, {} ids for {:?}", ts, ids.len(), lead)));
        }
        let (v, d) = (ts[0], ts[1]);
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IndexOutOfRange { what: "embedding table", index: id, size: v });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let ng = self.needs(table);
        self.push("embedding", shape, out, Op::Embedding { table, ids: ids.to_vec() }, ng)
    }

    /// Selects flattened rows of `x`; output is `[rows.len() × cols]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.live()?;
        let (n, cols) = rows_cols(&self.nodes[x.0].shape);
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange { what: "rows", index: r, size: n });
            }
            out.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        let ng = self.needs(x);
        self.push("gather_rows", vec![rows.len(), cols], out, Op::GatherRows { x, rows: rows.to_vec() }, ng)
    }

    /// Multi-head causal self-attention over a fused `[batch·seq × 3d]`
    /// projection laid out as `[Q | K | V]`. Query `t` attends to keys
    /// `0..=t` whose `key_mask` entry is set; a query with no admissible key
    /// produces zeros.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize, key_mask: &[bool]) -> Result<Var> {
        self.live()?;
        let (rows, w) = rows_cols(&self.nodes[qkv.0].shape);
        if rows != batch * seq || w % 3 != 0 || heads == 0 || (w / 3) % heads != 0 || key_mask.len() != rows {
            return Err(Error::shape(
                "causal_attention",
                format!("qkv {:?} with batch {} seq {} heads {}", self.nodes[qkv.0].shape, batch, seq, heads),
            ));
        }
        let d = w / 3;
        let dh = d / heads;
        let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
        let qv = &self.nodes[qkv.0].value;
        let mut out = vec![F::zero(); rows * d];
        let save = self.grad_enabled && self.nodes[qkv.0].needs_grad;
        let mut probs = if save { vec![F::zero(); batch * heads * seq * seq] } else { Vec::new() };
        let mut scores = vec![F::zero(); seq * seq];
        for b in 0..batch {
            let base = b * seq * w;
            let mask = &key_mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let q_off = base + h * dh;
                let k_off = base + d + h * dh;
                let v_off = base + 2 * d + h * dh;
                F::gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    View::rows(qv, q_off, w),
                    View::transposed(qv, k_off, w),
                    F::zero(),
                    ViewMut::rows(&mut scores, 0, seq),
                );
                causal_softmax_in_place(&mut scores, seq, mask);
                F::gemm(
                    seq,
                    seq,
                    dh,
                    F::one(),
                    View::rows(&scores, 0, seq),
                    View::rows(qv, v_off, w),
                    F::zero(),
                    ViewMut::rows(&mut out, b * seq * d + h * dh, d),
                );
                if save {
                    let p_off = (b * heads + h) * seq * seq;
                    probs[p_off..p_off + seq * seq].copy_from_slice(&scores);
                }
            }
        }
        let mut shape = self.nodes[qkv.0].shape.clone();
        *shape.last_mut().unwrap() = d;
        self.push("causal_attention", shape, out, Op::CausalAttention { qkv, batch, seq, heads, probs }, save)
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        check_finite("softmax_rows", &self.nodes[x.0].value)?;
        let (_, cols) = rows_cols(&self.nodes[x.0].shape);
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push("softmax_rows", shape, out, Op::SoftmaxRows { x }, ng)
    }

    /// `-Σ_r w_r · log_softmax(logits_r)[target_r]` over rows of `logits`.
    /// Rows with zero weight are skipped entirely: their logits never enter
    /// the value or the gradient.
    pub fn nll_rows(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        self.live()?;
        let (rows, cols) = rows_cols(&self.nodes[logits.0].shape);
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::shape("nll_rows", format!("{} rows, {} targets, {} weights", rows, targets.len(), weights.len())));
        }
        let lv = &self.nodes[logits.0].value;
        let save = self.needs(logits);
        let mut probs = if save { vec![F::zero(); rows * cols] } else { Vec::new() };
        let mut total = F::zero();
        for r in 0..rows {
            let w = weights[r];
            if w == F::zero() {
                continue;
            }
            let t = targets[r];
            if t >= cols {
                return Err(Error::IndexOutOfRange { what: "target class", index: t, size: cols });
            }
            let row = &lv[r * cols..(r + 1) * cols];
            check_finite("nll_rows", row)?;
            let lse = log_sum_exp(row);
            total -= w * (row[t] - lse);
            if save {
                for (p, &l) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *p = (l - lse).exp();
                }
            }
        }
        self.push(
            "nll_rows",
            Vec::new(),
            vec![total],
            Op::NllRows { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            save,
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape)));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every reachable input
    /// that requires grad has its gradient available through [`Tape::grad`];
    /// contributions from multiple uses of a value are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.live()?;
        let numel = self.nodes[loss.0].value.len();
        if numel != 1 {
            return Err(Error::NotScalar { numel });
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[F]) {
        // Split borrows: node values are read while input grads are written.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = rows_cols(&nodes[a.0].shape);
                let (_, n) = rows_cols(&node.shape);
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    // dA = dC · Bᵀ  (or dC · B when C = A·Bᵀ)
                    let bview = if *trans_b { View::rows(bv, 0, k) } else { View::transposed(bv, 0, n) };
                    F::gemm(m, n, k, F::one(), View::rows(g, 0, n), bview, F::one(), ViewMut::rows(ga, 0, k));
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    if *trans_b {
                        // dB[n×k] = dCᵀ · A
                        F::gemm(n, m, k, F::one(), View::transposed(g, 0, n), View::rows(av, 0, k), F::one(), ViewMut::rows(gb, 0, k));
                    } else {
                        // dB[k×n] = Aᵀ · dC
                        F::gemm(k, m, n, F::one(), View::transposed(av, 0, k), View::rows(g, 0, n), F::one(), ViewMut::rows(gb, 0, n));
                    }
                }
            }
            Op::AddRowBias { x, bias } => {
                let (_, cols) = rows_cols(&node.shape);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *bias) {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Mul { a, b } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(d, (&gg, &y))| *d += gg * y);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    gb.iter_mut().zip(g.iter().zip(av)).for_each(|(d, (&gg, &x))| *d += gg * x);
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, &gg)| *d += gg * *c);
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Gelu { x, tanh } => {
                let xv = &nodes[x.0].value;
                let c = F::from_f64_lossy(GELU_C);
                let half = F::from_f64_lossy(0.5);
                let three_a = F::from_f64_lossy(3.0 * GELU_A);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (((d, &gg), &v), &t) in gx.iter_mut().zip(g).zip(xv).zip(tanh) {
                        let dy = half * (F::one() + t) + half * v * (F::one() - t * t) * c * (F::one() + three_a * v * v);
                        *d += gg * dy;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (rows, d) = rows_cols(&node.shape);
                let gv = &nodes[gain.0].value;
                if let Some(gg) = grad_slot(nodes, grads, *gain) {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *bias) {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                }
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let dn = F::from_usize(d).unwrap();
                    let mut dxhat = vec![F::zero(); d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_d = F::zero();
                        let mut mean_dh = F::zero();
                        for c in 0..d {
                            dxhat[c] = gr[c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dh += dxhat[c] * hr[c];
                        }
                        mean_d /= dn;
                        mean_dh /= dn;
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].shape[1];
                if let Some(gt) = grad_slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let (_, cols) = rows_cols(&node.shape);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(&mut gx[src * cols..(src + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::CausalAttention { qkv, batch, seq, heads, probs } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let w = nodes[qkv.0].shape.last().copied().unwrap_or(0);
                let d = w / 3;
                let dh = d / heads;
                let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
                let qv = &nodes[qkv.0].value;
                if let Some(gq) = grad_slot(nodes, grads, *qkv) {
                    let mut dp = vec![F::zero(); seq * seq];
                    for b in 0..batch {
                        let base = b * seq * w;
                        for h in 0..heads {
                            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                            let q_off = base + h * dh;
                            let k_off = base + d + h * dh;
                            let v_off = base + 2 * d + h * dh;
                            let o_off = b * seq * d + h * dh;
                            // dP = dO · Vᵀ
                            F::gemm(
                                seq,
                                dh,
                                seq,
                                F::one(),
                                View::rows(g, o_off, d),
                                View::transposed(qv, v_off, w),
                                F::zero(),
                                ViewMut::rows(&mut dp, 0, seq),
                            );
                            // dV = Pᵀ · dO
                            F::gemm(
                                seq,
                                seq,
                                dh,
                                F::one(),
                                View::transposed(p, 0, seq),
                                View::rows(g, o_off, d),
                                F::one(),
                                ViewMut::rows(gq, v_off, w),
                            );
                            // dS = P ∘ (dP − rowsum(P ∘ dP)), folded with the score scale
                            for i in 0..seq {
                                let pr = &p[i * seq..(i + 1) * seq];
                                let dr = &mut dp[i * seq..(i + 1) * seq];
                                let dot: F = pr[..=i].iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum();
                                for j in 0..seq {
                                    dr[j] = if j <= i { pr[j] * (dr[j] - dot) * scale } else { F::zero() };
                                }
                            }
                            // dQ = dS · K ; dK = dSᵀ · Q
                            F::gemm(
                                seq,
                                seq,
                                dh,
                                F::one(),
                                View::rows(&dp, 0, seq),
                                View::rows(qv, k_off, w),
                                F::one(),
                                ViewMut::rows(gq, q_off, w),
                            );
                            F::gemm(
                                seq,
                                seq,
                                dh,
                                F::one(),
                                View::transposed(&dp, 0, seq),
                                View::rows(qv, q_off, w),
                                F::one(),
                                ViewMut::rows(gq, k_off, w),
                            );
                        }
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                let (_, cols) = rows_cols(&node.shape);
                let y = &node.value;
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((dx, gr), yr) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for c in 0..cols {
                            dx[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::NllRows { logits, targets, weights, probs } => {
                let (_, cols) = rows_cols(&nodes[logits.0].shape);
                if let Some(gl) = grad_slot(nodes, grads, *logits) {
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == F::zero() {
                            continue;
                        }
                        let scale = g[0] * w;
                        let row = &mut gl[r * cols..(r + 1) * cols];
                        for (d, &p) in row.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *d += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
        }
    }

    /// Adds the gradient of `v` (if any) into `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor<F>) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn grad_slot<'a, F: Real>(nodes: &[Node<F>], grads: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
}

/// `max + ln Σ exp(x − max)`.
/// `tanh` through a single `exp`; saturates cleanly at ±1.
fn fast_tanh<F: Real>(u: F) -> F {
    let two = F::one() + F::one();
    F::one() - two / ((two * u).exp() + F::one())
}

pub fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn causal_softmax_in_place<F: Real>(scores: &mut [F], seq: usize, key_mask: &[bool]) {
    for i in 0..seq {
        let row = &mut scores[i * seq..(i + 1) * seq];
        let mut max = F::neg_infinity();
        for j in 0..=i {
            if key_mask[j] && row[j] > max {
                max = row[j];
            }
        }
        if max == F::neg_infinity() {
            row.iter_mut().for_each(|v| *v = F::zero());
            continue;
        }
        let mut s = F::zero();
        for j in 0..seq {
            if j <= i && key_mask[j] {
                row[j] = (row[j] - max).exp();
                s += row[j];
            } else {
                row[j] = F::zero();
            }
        }
        for v in row[..=i].iter_mut() {
            *v /= s;
        }
    }
}
