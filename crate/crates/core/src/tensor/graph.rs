use std::fmt;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]'s tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of every differentiable operation, used for gradient-check reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    MatMul,
    BatchMatMul,
    BatchMatMulTransposed,
    Add,
    Sub,
    Mul,
    AddBias,
    Scale,
    Gelu,
    Dropout,
    SoftmaxRows,
    MaskedSoftmaxRows,
    LayerNorm,
    Gather,
    Reshape,
    SplitHeads,
    MergeHeads,
    MaskedMean,
    CosineRows,
    NegLogSigmoid,
    Sum,
    Mean,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::MatMul,
        OpKind::BatchMatMul,
        OpKind::BatchMatMulTransposed,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddBias,
        OpKind::Scale,
        OpKind::Gelu,
        OpKind::Dropout,
        OpKind::SoftmaxRows,
        OpKind::MaskedSoftmaxRows,
        OpKind::LayerNorm,
        OpKind::Gather,
        OpKind::Reshape,
        OpKind::SplitHeads,
        OpKind::MergeHeads,
        OpKind::MaskedMean,
        OpKind::CosineRows,
        OpKind::NegLogSigmoid,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "batch_matmul",
            OpKind::BatchMatMulTransposed => "batch_matmul_nt",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Scale => "scale",
            OpKind::Gelu => "gelu",
            OpKind::Dropout => "dropout",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::MaskedSoftmaxRows => "masked_softmax_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gather => "embedding_gather",
            OpKind::Reshape => "reshape",
            OpKind::SplitHeads => "split_heads",
            OpKind::MergeHeads => "merge_heads",
            OpKind::MaskedMean => "masked_mean",
            OpKind::CosineRows => "cosine_rows",
            OpKind::NegLogSigmoid => "neg_log_sigmoid",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Gelu {
        x: Var,
    },
    Dropout {
        x: Var,
        keep_scale: Vec<f64>,
    },
    Softmax {
        x: Var,
        masked: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    MaskedMean {
        x: Var,
        weights: Vec<f64>,
    },
    CosineRows {
        a: Var,
        b: Var,
        eps: f64,
    },
    NegLogSigmoid {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        gold: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::BatchMatMul { transpose_b: false, .. } => OpKind::BatchMatMul,
            Op::BatchMatMul { transpose_b: true, .. } => OpKind::BatchMatMulTransposed,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Scale { .. } => OpKind::Scale,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Softmax { masked: false, .. } => OpKind::SoftmaxRows,
            Op::Softmax { masked: true, .. } => OpKind::MaskedSoftmaxRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::SplitHeads { .. } => OpKind::SplitHeads,
            Op::MergeHeads { .. } => OpKind::MergeHeads,
            Op::MaskedMean { .. } => OpKind::MaskedMean,
            Op::CosineRows { .. } => OpKind::CosineRows,
            Op::NegLogSigmoid { .. } => OpKind::NegLogSigmoid,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients of every `requires_grad` leaf after a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf registered with `requires_grad = true`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// The tape. Nodes are appended in evaluation order, so the node list is
/// already a topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `−ln σ(x)`, stable for large `|x|`.
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corrupts the backward rule of `kind` by scaling its input gradients.
    /// Exists so verification tooling can prove it detects a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric("leaf tensor contains non-finite values".into()));
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            let name = op.kind().map_or("leaf", OpKind::name);
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op computed a consistent shape")
    }

    /// `a[..., k] · b[k, n] -> [..., n]`; leading dims of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa.last() != Some(&sb[0]) {
            return Err(shape_err("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k;
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push(Self::tensor(shape, out), &[a, b], Op::MatMul { a, b })
    }

    /// Batched product over the leading dim: `a[B, m, k] · b[B, k, n]`, or
    /// `a[B, m, k] · b[B, n, k]ᵀ` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let a_i = &ad[i * m * k..(i + 1) * m * k];
            let b_i = &bd[i * k * n..(i + 1) * k * n];
            let o_i = &mut out[i * m * n..(i + 1) * m * n];
            if transpose_b {
                let bt = kernels::transpose(b_i, n, k);
                kernels::matmul(a_i, &bt, m, k, n, o_i);
            } else {
                kernels::matmul(a_i, b_i, m, k, n, o_i);
            }
        }
        self.push(
            Self::tensor(vec![batch, m, n], out),
            &[a, b],
            Op::BatchMatMul { a, b, transpose_b },
        )
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Self::tensor(shape, out), &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// Adds a `[n]` bias to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.shape().len() != 1 || tb.len() != tx.last_dim() {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let n = tb.len();
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % n])
            .collect();
        let shape = tx.shape().to_vec();
        self.push(Self::tensor(shape, out), &[x, bias], Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|v| v * factor).collect();
        let shape = tx.shape().to_vec();
        self.push(Self::tensor(shape, out), &[x], Op::Scale { x, factor })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|&v| gelu(v)).collect();
        let shape = tx.shape().to_vec();
        self.push(Self::tensor(shape, out), &[x], Op::Gelu { x })
    }

    /// Inverted dropout with a caller-supplied keep mask. `keep.len()` must
    /// equal the element count; kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, keep: &[bool], rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} not in [0, 1)")));
        }
        let tx = self.value(x);
        if keep.len() != tx.len() {
            return Err(Error::Dimension(format!(
                "dropout mask has {} entries for {} values",
                keep.len(),
                tx.len()
            )));
        }
        let s = 1.0 / (1.0 - rate);
        let keep_scale: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let out = tx.data().iter().zip(&keep_scale).map(|(v, k)| v * k).collect();
        let shape = tx.shape().to_vec();
        self.push(Self::tensor(shape, out), &[x], Op::Dropout { x, keep_scale })
    }

    fn softmax_impl(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.last_dim();
        if let Some(k) = keep {
            if k.len() != tx.len() {
                return Err(Error::Dimension(format!(
                    "softmax mask has {} entries for {} values",
                    k.len(),
                    tx.len()
                )));
            }
        }
        let mut out = vec![0.0; tx.len()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let kept = |j: usize| keep.is_none_or(|k| k[r * n + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if kept(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("softmax row {r} is fully masked")));
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if kept(j) {
                    let e = (v - max).exp();
                    o[j] = e;
                    total += e;
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let shape = tx.shape().to_vec();
        let masked = keep.is_some();
        self.push(Self::tensor(shape, out), &[x], Op::Softmax { x, masked })
    }

    /// Softmax over the last dim, with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last dim where `keep[i] == false` entries act as −∞
    /// logits and receive exactly zero probability.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(keep))
    }

    /// Row-wise `(x − mean) / sqrt(var + eps) · gamma + beta` with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.last_dim();
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        self.push(
            Self::tensor(shape, out),
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row lookup: `table[V, d]` gathered at `ids` gives `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "gather table must be 2-D, got {:?}",
                tt.shape()
            )));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if ids.is_empty() {
            return Err(Error::Contract("gather needs at least one id".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Dimension(format!("id {bad} out of range for table of {v} rows")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tt.row(i));
        }
        let ids = ids.to_vec();
        self.push(
            Self::tensor(vec![ids.len(), d], out),
            &[table],
            Op::Gather { table, ids },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, &[x], Op::Reshape { x })
    }

    /// `[b, s, h·dh] -> [b·h, s, dh]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(Error::Dimension(format!("cannot split {s:?} into {heads} heads")));
        }
        let (b, sl, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..sl {
                for h in 0..heads {
                    let from = (bi * sl + t) * d + h * dh;
                    let to = ((bi * heads + h) * sl + t) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        self.push(
            Self::tensor(vec![b * heads, sl, dh], out),
            &[x],
            Op::SplitHeads { x, heads },
        )
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(Error::Dimension(format!("cannot merge {s:?} from {heads} heads")));
        }
        let (bh, sl, dh) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let d = dh * heads;
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..sl {
                for h in 0..heads {
                    let to = (bi * sl + t) * d + h * dh;
                    let from = ((bi * heads + h) * sl + t) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        self.push(Self::tensor(vec![b, sl, d], out), &[x], Op::MergeHeads { x, heads })
    }

    /// Mean over the positions of `x[b, s, d]` where `mask[b·s]` is set.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(Error::Dimension(format!(
                "masked_mean: mask of {} entries for input {s:?}",
                mask.len()
            )));
        }
        let (b, sl, d) = (s[0], s[1], s[2]);
        let mut weights = vec![0.0; b * sl];
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let row_mask = &mask[bi * sl..(bi + 1) * sl];
            let count = row_mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::Contract(format!("masked_mean: row {bi} is fully masked")));
            }
            let w = 1.0 / count as f64;
            let o = &mut out[bi * d..(bi + 1) * d];
            for t in 0..sl {
                if row_mask[t] {
                    weights[bi * sl + t] = w;
                    for (ov, &xv) in o.iter_mut().zip(tx.row(bi * sl + t)) {
                        *ov += xv;
                    }
                }
            }
            for ov in o.iter_mut() {
                *ov *= w;
            }
        }
        self.push(Self::tensor(vec![b, d], out), &[x], Op::MaskedMean { x, weights })
    }

    /// Row-wise cosine similarity `a·b / (‖a‖‖b‖ + eps)` of two `[n, d]` tensors, giving `[n]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || ta.shape().len() > 2 {
            return Err(shape_err("cosine_rows", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = (0..ta.rows()).map(|r| cosine(ta.row(r), tb.row(r), eps)).collect();
        let n = out.len();
        self.push(Self::tensor(vec![n], out), &[a, b], Op::CosineRows { a, b, eps })
    }

    /// Elementwise `−ln σ(x)` (softplus of `−x`).
    pub fn neg_log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|&v| neg_log_sigmoid(v)).collect();
        let shape = tx.shape().to_vec();
        self.push(Self::tensor(shape, out), &[x], Op::NegLogSigmoid { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), &[x], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let total: f64 = t.data().iter().sum();
        let mean = total / t.len() as f64;
        self.push(Tensor::scalar(mean), &[x], Op::Mean { x })
    }

    /// Mean over rows with a gold label of `−ln softmax(logits[row])[gold]`.
    /// `logits` is viewed as `[rows, K]`; `gold[row] == None` rows are skipped.
    pub fn cross_entropy(&mut self, logits: Var, gold: &[Option<usize>]) -> Result<Var> {
        let t = self.value(logits);
        let k = t.last_dim();
        if gold.len() != t.rows() {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for {} rows",
                gold.len(),
                t.rows()
            )));
        }
        if let Some(bad) = gold.iter().flatten().find(|&&g| g >= k) {
            return Err(Error::Data(format!("gold tag id {bad} out of range for {k} tags")));
        }
        let count = gold.iter().flatten().count();
        if count == 0 {
            return Err(Error::Contract("cross_entropy: no labelled positions".into()));
        }
        let mut probs = vec![0.0; t.len()];
        let mut total = 0.0;
        for (r, g) in gold.iter().enumerate() {
            let Some(g) = *g else { continue };
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[g];
            for j in 0..k {
                probs[r * k + j] = (row[j] - log_z).exp();
            }
        }
        let gold = gold.to_vec();
        self.push(
            Tensor::scalar(total / count as f64),
            &[logits],
            Op::CrossEntropy {
                logits,
                gold,
                probs,
                count,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// `requires_grad` leaf (zeros for leaves the loss does not reach).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} at {}",
                    node.op.kind().map_or("leaf", OpKind::name)
                )));
            }
            let fault = self.fault.is_some() && self.fault == node.op.kind();
            let mut deliver = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, mut delta: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                if fault {
                    for d in delta.iter_mut() {
                        *d *= 1.5;
                    }
                }
                accumulate(&mut grads[v.0], delta);
            };
            self.backprop_node(node, &g, &mut grads, &mut deliver)?;
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = match grads.get_mut(i).and_then(Option::take) {
                    Some(d) => d,
                    None => vec![0.0; node.value.len()],
                };
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at leaf {i}")));
                }
                out.push(Some(Self::tensor(shape, data)));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut Vec<Option<Vec<f64>>>,
        deliver: &mut impl FnMut(&mut Vec<Option<Vec<f64>>>, Var, Vec<f64>),
    ) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = val(*a).len() / k;
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt_acc(g, val(*b), m, n, k, &mut da);
                    deliver(grads, *a, da);
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn_acc(val(*a), g, m, k, n, &mut db);
                    deliver(grads, *b, db);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (val(*a), val(*b));
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for i in 0..batch {
                    let a_i = &ad[i * m * k..(i + 1) * m * k];
                    let b_i = &bd[i * k * n..(i + 1) * k * n];
                    let g_i = &g[i * m * n..(i + 1) * m * n];
                    let da_i = &mut da[i * m * k..(i + 1) * m * k];
                    let db_i = &mut db[i * k * n..(i + 1) * k * n];
                    if *transpose_b {
                        // c = a bᵀ with b[n×k]: da = g b, db = gᵀ a
                        let mut tmp = vec![0.0; m * k];
                        kernels::matmul(g_i, b_i, m, n, k, &mut tmp);
                        da_i.copy_from_slice(&tmp);
                        kernels::matmul_tn_acc(g_i, a_i, m, n, k, db_i);
                    } else {
                        kernels::matmul_nt_acc(g_i, b_i, m, n, k, da_i);
                        kernels::matmul_tn_acc(a_i, g_i, m, k, n, db_i);
                    }
                }
                if needs(*a) {
                    deliver(grads, *a, da);
                }
                if needs(*b) {
                    deliver(grads, *b, db);
                }
            }
            Op::Add { a, b } => {
                deliver(grads, *a, g.to_vec());
                deliver(grads, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                deliver(grads, *a, g.to_vec());
                deliver(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                deliver(grads, *a, g.iter().zip(bd).map(|(g, b)| g * b).collect());
                deliver(grads, *b, g.iter().zip(ad).map(|(g, a)| g * a).collect());
            }
            Op::AddBias { x, bias } => {
                let n = self.value(*bias).len();
                if needs(*bias) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    deliver(grads, *bias, db);
                }
                deliver(grads, *x, g.to_vec());
            }
            Op::Scale { x, factor } => {
                deliver(grads, *x, g.iter().map(|v| v * factor).collect());
            }
            Op::Gelu { x } => {
                let xd = val(*x);
                deliver(grads, *x, g.iter().zip(xd).map(|(g, &x)| g * gelu_grad(x)).collect());
            }
            Op::Dropout { x, keep_scale } => {
                deliver(grads, *x, g.iter().zip(keep_scale).map(|(g, k)| g * k).collect());
            }
            Op::Softmax { x, .. } => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                deliver(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).len();
                let gd = val(*gamma);
                if needs(*gamma) {
                    let mut dg = vec![0.0; n];
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    deliver(grads, *gamma, dg);
                }
                if needs(*beta) {
                    let mut db = vec![0.0; n];
                    for gr in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(gr) {
                            *d += v;
                        }
                    }
                    deliver(grads, *beta, db);
                }
                if needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let nf = n as f64;
                    for (r, ((dxr, gr), hr)) in dx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let is = inv_std[r];
                        for j in 0..n {
                            let dh = gr[j] * gd[j];
                            dxr[j] = is / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    deliver(grads, *x, dx);
                }
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).last_dim();
                let mut dt = vec![0.0; self.value(*table).len()];
                for (row, &id) in ids.iter().enumerate() {
                    for (t, v) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[row * d..(row + 1) * d]) {
                        *t += v;
                    }
                }
                deliver(grads, *table, dt);
            }
            Op::Reshape { x } => deliver(grads, *x, g.to_vec()),
            Op::SplitHeads { x, heads } => {
                let s = self.shape(*x);
                let (b, sl, d) = (s[0], s[1], s[2]);
                let dh = d / heads;
                let mut dx = vec![0.0; g.len()];
                for bi in 0..b {
                    for t in 0..sl {
                        for h in 0..*heads {
                            let to = (bi * sl + t) * d + h * dh;
                            let from = ((bi * heads + h) * sl + t) * dh;
                            dx[to..to + dh].copy_from_slice(&g[from..from + dh]);
                        }
                    }
                }
                deliver(grads, *x, dx);
            }
            Op::MergeHeads { x, heads } => {
                let s = self.shape(*x);
                let (bh, sl, dh) = (s[0], s[1], s[2]);
                let b = bh / heads;
                let d = dh * heads;
                let mut dx = vec![0.0; g.len()];
                for bi in 0..b {
                    for t in 0..sl {
                        for h in 0..*heads {
                            let from = (bi * sl + t) * d + h * dh;
                            let to = ((bi * heads + h) * sl + t) * dh;
                            dx[to..to + dh].copy_from_slice(&g[from..from + dh]);
                        }
                    }
                }
                deliver(grads, *x, dx);
            }
            Op::MaskedMean { x, weights } => {
                let s = self.shape(*x);
                let (sl, d) = (s[1], s[2]);
                let mut dx = vec![0.0; val(*x).len()];
                for (pos, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let bi = pos / sl;
                    for (o, gv) in dx[pos * d..(pos + 1) * d].iter_mut().zip(&g[bi * d..(bi + 1) * d]) {
                        *o = gv * w;
                    }
                }
                deliver(grads, *x, dx);
            }
            Op::CosineRows { a, b, eps } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.last_dim();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for r in 0..ta.rows() {
                    let (ar, br) = (ta.row(r), tb.row(r));
                    let (ga, gb) = cosine_grad(ar, br, *eps);
                    for j in 0..d {
                        da[r * d + j] = g[r] * ga[j];
                        db[r * d + j] = g[r] * gb[j];
                    }
                }
                deliver(grads, *a, da);
                deliver(grads, *b, db);
            }
            Op::NegLogSigmoid { x } => {
                let xd = val(*x);
                deliver(
                    grads,
                    *x,
                    g.iter().zip(xd).map(|(g, &x)| g * (sigmoid(x) - 1.0)).collect(),
                );
            }
            Op::Sum { x } => deliver(grads, *x, vec![g[0]; val(*x).len()]),
            Op::Mean { x } => {
                let n = val(*x).len();
                deliver(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
                count,
            } => {
                let k = self.value(*logits).last_dim();
                let scale = g[0] / *count as f64;
                let mut dl = vec![0.0; probs.len()];
                for (r, gl) in gold.iter().enumerate() {
                    let Some(gl) = *gl else { continue };
                    for j in 0..k {
                        let onehot = if j == gl { 1.0 } else { 0.0 };
                        dl[r * k + j] = scale * (probs[r * k + j] - onehot);
                    }
                }
                deliver(grads, *logits, dl);
            }
        }
        Ok(())
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + eps)
}

fn cosine_grad(a: &[f64], b: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na * nb + eps;
    // d/da [dot / (|a||b| + eps)] = b/den − dot·|b|/den² · a/|a|
    let ca = if na > 0.0 { dot * nb / (den * den * na) } else { 0.0 };
    let cb = if nb > 0.0 { dot * na / (den * den * nb) } else { 0.0 };
    let ga = a.iter().zip(b).map(|(&x, &y)| y / den - ca * x).collect();
    let gb = a.iter().zip(b).map(|(&x, &y)| x / den - cb * y).collect();
    (ga, gb)
}
