//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each op evaluates eagerly,
//! pushes one node holding its output value plus whatever it needs for the
//! backward rule, and returns a copyable [`Var`] handle. Nodes are appended in
//! execution order, so walking the node list backwards is a valid reverse
//! topological order.
//!
//! Parameters enter the tape through [`Tape::param`] (dense copy) or
//! [`Tape::embed`] (row gather). [`Tape::backward`] accumulates
//! `∂loss/∂param` into the gradient buffers of the [`ParamStore`]; frozen
//! parameters and [`Tape::detach`]ed values never receive gradient.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PadError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, sigmoid, softplus, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYERNORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Embed {
        param: ParamId,
        indices: Vec<usize>,
    },
    Gather {
        src: usize,
        indices: Vec<usize>,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Transpose {
        src: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        src: usize,
        c: f64,
    },
    AddScalar {
        src: usize,
    },
    Exp {
        src: usize,
    },
    Log {
        src: usize,
    },
    Sigmoid {
        src: usize,
    },
    Tanh {
        src: usize,
    },
    Relu {
        src: usize,
    },
    Softmax {
        src: usize,
    },
    LayerNorm {
        src: usize,
        inv_std: Vec<f64>,
    },
    Concat {
        srcs: Vec<usize>,
        axis: usize,
    },
    Sum {
        src: usize,
    },
    Mean {
        src: usize,
    },
    SumAxis {
        src: usize,
        axis: usize,
    },
    SqNorm {
        src: usize,
    },
    L1Norm {
        src: usize,
    },
    Dropout {
        src: usize,
        mask: Vec<f64>,
    },
    Reshape {
        src: usize,
    },
    PairwiseSqDist {
        a: usize,
        b: usize,
    },
    PairwiseL1 {
        a: usize,
        b: usize,
    },
    NormalizeRows {
        src: usize,
        norms: Vec<f64>,
    },
    BceWithLogits {
        src: usize,
        labels: Vec<f64>,
        weights: Vec<f64>,
        wsum: f64,
    },
    PrefixMean {
        src: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accum(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// Training tape with a seeded dropout stream.
    pub fn training(dropout_seed: u64) -> Self {
        Tape {
            rng: Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(PadError::InvalidArgument(
                "variable does not belong to this tape".into(),
            ));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx }
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable does not belong to this tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.requires_grad())
    }

    /// Gather rows of a rank-2 parameter.
    pub fn embed(&mut self, store: &ParamStore, id: ParamId, indices: &[usize]) -> Result<Var> {
        let p = store.get(id);
        if p.value.rank() != 2 {
            return Err(PadError::shape(
                "embed",
                format!("{} has shape {:?}", p.name, p.value.shape()),
            ));
        }
        let (rows, d) = (p.value.shape()[0], p.value.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(PadError::InvalidArgument(format!(
                    "embed: index {i} out of range for {} ({rows} rows)",
                    p.name
                )));
            }
            out.extend_from_slice(p.value.row(i));
        }
        let value = Tensor::new(vec![indices.len(), d], out)?;
        let ng = p.requires_grad();
        Ok(self.push(
            value,
            Op::Embed {
                param: id,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Stop-gradient: same value, no gradient flows back.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.idx(v)?;
        let value = self.nodes[i].value.clone();
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Gather rows of `src` viewed as `[outer, last_dim]`.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.idx(src)?;
        let t = &self.nodes[s].value;
        let (rows, d) = (t.outer(), t.last_dim());
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(PadError::InvalidArgument(format!("gather_rows: index {i} >= {rows}")));
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![indices.len(), d], out)?;
        let ng = self.ng(s);
        Ok(self.push(
            value,
            Op::Gather {
                src: s,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(PadError::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm_nn(ta.data(), tb.data(), &mut out, n, k, m);
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul { a: ai, b: bi }, ng))
    }

    /// `[B,n,k] x [B,k,m]`, or `[B,n,k] x [B,m,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let bad = || {
            PadError::shape(
                "batch_matmul",
                format!("{:?} x {:?} (trans_b={trans_b})", ta.shape(), tb.shape()),
            )
        };
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(bad());
        }
        let (bsz, n, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let m = if trans_b {
            if tb.shape()[2] != k {
                return Err(bad());
            }
            tb.shape()[1]
        } else {
            if tb.shape()[1] != k {
                return Err(bad());
            }
            tb.shape()[2]
        };
        let mut out = vec![0.0; bsz * n * m];
        for s in 0..bsz {
            let a_s = &ta.data()[s * n * k..(s + 1) * n * k];
            let b_s = &tb.data()[s * k * m..(s + 1) * k * m];
            let c_s = &mut out[s * n * m..(s + 1) * n * m];
            if trans_b {
                gemm_nt(a_s, b_s, c_s, n, k, m);
            } else {
                gemm_nn(a_s, b_s, c_s, n, k, m);
            }
        }
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(
            Tensor::new(vec![bsz, n, m], out)?,
            Op::BatchMatMul { a: ai, b: bi, trans_b },
            ng,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        if t.rank() != 2 {
            return Err(PadError::shape("transpose", format!("{:?}", t.shape())));
        }
        let (n, m) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = t.data()[i * m + j];
            }
        }
        let ng = self.ng(ai);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Transpose { src: ai }, ng))
    }

    fn broadcast_check(&self, op: &'static str, ai: usize, bi: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(PadError::shape(op, format!("{sa:?} with {sb:?}")));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.broadcast_check(op, ai, bi)?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let nb = tb.numel();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, tb.data()[k % nb]))
            .collect();
        Ok((ai, bi, Tensor::new(ta.shape().to_vec(), data)?))
    }

    /// Elementwise `a + b`; `b` may have a suffix of `a`'s shape and is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(t, Op::Add { a: ai, b: bi }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(t, Op::Sub { a: ai, b: bi }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(t, Op::Mul { a: ai, b: bi }, ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        let data = t.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::Scale { src: ai, c }, ng))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let (value, ng) = self.map(ai, |x| x + c)?;
        Ok(self.push(value, Op::AddScalar { src: ai }, ng))
    }

    fn map(&self, ai: usize, f: impl Fn(f64) -> f64) -> Result<(Tensor, bool)> {
        let t = &self.nodes[ai].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        Ok((Tensor::new(t.shape().to_vec(), data)?, self.ng(ai)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let (value, ng) = self.map(ai, f64::exp)?;
        Ok(self.push(value, Op::Exp { src: ai }, ng))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        if let Some(bad) = self.nodes[ai].value.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(PadError::domain("log", format!("non-positive input {bad}")));
        }
        let (value, ng) = self.map(ai, f64::ln)?;
        Ok(self.push(value, Op::Log { src: ai }, ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let (value, ng) = self.map(ai, sigmoid)?;
        Ok(self.push(value, Op::Sigmoid { src: ai }, ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let (value, ng) = self.map(ai, f64::tanh)?;
        Ok(self.push(value, Op::Tanh { src: ai }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let (value, ng) = self.map(ai, |x| if x > 0.0 { x } else { 0.0 })?;
        Ok(self.push(value, Op::Relu { src: ai }, ng))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        let d = t.last_dim();
        if d == 0 || t.numel() == 0 {
            return Err(PadError::shape("softmax", format!("empty rows in {:?}", t.shape())));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::Softmax { src: ai }, ng))
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        let d = t.last_dim();
        if d == 0 || t.numel() == 0 {
            return Err(PadError::shape("layer_norm", format!("empty rows in {:?}", t.shape())));
        }
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(t.outer());
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::LayerNorm { src: ai, inv_std }, ng))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(PadError::shape("concat", "no inputs"));
        }
        let idxs = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = self.nodes[idxs[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(PadError::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(PadError::shape(
                    "concat",
                    format!("{first:?} with {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idxs {
                let t = &self.nodes[i].value;
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = idxs.iter().any(|&i| self.ng(i));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { srcs: idxs, axis }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        let ng = self.ng(ai);
        Ok(self.push(Tensor::scalar(s), Op::Sum { src: ai }, ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        if t.numel() == 0 {
            return Err(PadError::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.ng(ai);
        Ok(self.push(Tensor::scalar(s), Op::Mean { src: ai }, ng))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        if axis >= t.rank() {
            return Err(PadError::shape("sum_axis", format!("axis {axis} for {:?}", t.shape())));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &t.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let ng = self.ng(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis { src: ai, axis }, ng))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = {
            let ai = self.idx(a)?;
            let s = self.nodes[ai].value.shape();
            if axis >= s.len() || s[axis] == 0 {
                return Err(PadError::shape("mean_axis", format!("axis {axis} for {s:?}")));
            }
            s[axis]
        };
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of squares of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.data().iter().map(|x| x * x).sum();
        let ng = self.ng(ai);
        Ok(self.push(Tensor::scalar(s), Op::SqNorm { src: ai }, ng))
    }

    /// Sum of absolute values of all entries.
    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.data().iter().map(|x| x.abs()).sum();
        let ng = self.ng(ai);
        Ok(self.push(Tensor::scalar(s), Op::L1Norm { src: ai }, ng))
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(PadError::domain("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(a);
        };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let t = &self.nodes[ai].value;
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::Dropout { src: ai, mask }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai]
            .value
            .reshape(shape)
            .map_err(|_| PadError::shape("reshape", format!("{:?} -> {shape:?}", self.nodes[ai].value.shape())))?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::Reshape { src: ai }, ng))
    }

    fn pairwise_dims(&self, op: &'static str, ai: usize, bi: usize) -> Result<(usize, usize, usize)> {
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(PadError::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Ok((ta.shape()[0], tb.shape()[0], ta.shape()[1]))
    }

    /// `out[i,j] = ‖a_i − b_j‖²`
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (n, m, d) = self.pairwise_dims("pairwise_sq_dist", ai, bi)?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = ta.row(i);
            for j in 0..m {
                let y = tb.row(j);
                let mut s = 0.0;
                for k in 0..d {
                    let diff = x[k] - y[k];
                    s += diff * diff;
                }
                out.push(s);
            }
        }
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::PairwiseSqDist { a: ai, b: bi }, ng))
    }

    /// `out[i,j] = ‖a_i − b_j‖₁`
    pub fn pairwise_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (n, m, _) = self.pairwise_dims("pairwise_l1", ai, bi)?;
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(ta.row(i).iter().zip(tb.row(j)).map(|(x, y)| (x - y).abs()).sum());
            }
        }
        let ng = self.ng(ai) || self.ng(bi);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::PairwiseL1 { a: ai, b: bi }, ng))
    }

    /// Scale each row of a rank-2 tensor to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        if t.rank() != 2 {
            return Err(PadError::shape("normalize_rows", format!("{:?}", t.shape())));
        }
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.outer());
        for (r, row) in out.chunks_mut(d).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(PadError::domain("normalize_rows", format!("row {r} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::NormalizeRows { src: ai, norms }, ng))
    }

    /// Weighted mean binary cross-entropy on logits: `Σ w·(softplus(x) − y·x) / Σ w`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let li = self.idx(logits)?;
        let t = &self.nodes[li].value;
        let n = t.numel();
        if labels.len() != n || weights.is_some_and(|w| w.len() != n) || n == 0 {
            return Err(PadError::shape(
                "bce_with_logits",
                format!("{n} logits, {} labels", labels.len()),
            ));
        }
        let weights = weights.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
        let wsum: f64 = weights.iter().sum();
        if !(wsum > 0.0) {
            return Err(PadError::domain("bce_with_logits", "weights sum to zero"));
        }
        let loss = t
            .data()
            .iter()
            .zip(labels)
            .zip(&weights)
            .map(|((&x, &y), &w)| w * (softplus(x) - y * x))
            .sum::<f64>()
            / wsum;
        let ng = self.ng(li);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                src: li,
                labels: labels.to_vec(),
                weights,
                wsum,
            },
            ng,
        ))
    }

    /// Running mean over the middle axis of `[B, T, d]`: `out[b,t] = mean(x[b, 0..=t])`.
    pub fn prefix_mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let t = &self.nodes[ai].value;
        if t.rank() != 3 {
            return Err(PadError::shape("prefix_mean", format!("{:?}", t.shape())));
        }
        let (b, steps, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut out = vec![0.0; t.numel()];
        let mut acc = vec![0.0; d];
        for s in 0..b {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..steps {
                let off = (s * steps + k) * d;
                let inv = 1.0 / (k + 1) as f64;
                for j in 0..d {
                    acc[j] += t.data()[off + j];
                    out[off + j] = acc[j] * inv;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(ai);
        Ok(self.push(value, Op::PrefixMean { src: ai }, ng))
    }

    /// Back-propagate from a scalar `loss`, accumulating into `store` gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(PadError::Backward("loss is not on this tape".into()));
        }
        if self.nodes[loss.idx].value.numel() != 1 {
            return Err(PadError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if let Some(pg) = store.get_mut(*id).grad.as_mut() {
                    pg.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Embed { param, indices } => {
                let p = store.get_mut(*param);
                let d = p.value.last_dim();
                if let Some(pg) = p.grad.as_mut() {
                    for (r, &row) in indices.iter().enumerate() {
                        let dst = &mut pg[row * d..(row + 1) * d];
                        dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Gather { src, indices } => {
                if self.ng(*src) {
                    let t = val(*src);
                    let d = t.last_dim();
                    let dst = accum(grads, *src, t.numel());
                    for (r, &row) in indices.iter().enumerate() {
                        dst[row * d..(row + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.ng(*a) {
                    gemm_nt(g, tb.data(), accum(grads, *a, n * k), n, m, k);
                }
                if self.ng(*b) {
                    gemm_tn(ta.data(), g, accum(grads, *b, k * m), n, k, m);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (bsz, n, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let m = node.value.shape()[2];
                if self.ng(*a) {
                    let ga = accum(grads, *a, bsz * n * k);
                    for s in 0..bsz {
                        let g_s = &g[s * n * m..(s + 1) * n * m];
                        let b_s = &tb.data()[s * k * m..(s + 1) * k * m];
                        let ga_s = &mut ga[s * n * k..(s + 1) * n * k];
                        if *trans_b {
                            // C = A Bᵀ, B: [m,k] → dA = G B
                            gemm_nn(g_s, b_s, ga_s, n, m, k);
                        } else {
                            gemm_nt(g_s, b_s, ga_s, n, m, k);
                        }
                    }
                }
                if self.ng(*b) {
                    let gb = accum(grads, *b, bsz * k * m);
                    for s in 0..bsz {
                        let g_s = &g[s * n * m..(s + 1) * n * m];
                        let a_s = &ta.data()[s * n * k..(s + 1) * n * k];
                        let gb_s = &mut gb[s * k * m..(s + 1) * k * m];
                        if *trans_b {
                            // dB[m,k] = Gᵀ A
                            gemm_tn(g_s, a_s, gb_s, n, m, k);
                        } else {
                            gemm_tn(a_s, g_s, gb_s, n, k, m);
                        }
                    }
                }
            }
            Op::Transpose { src } => {
                if self.ng(*src) {
                    let t = val(*src);
                    let (n, m) = (t.shape()[0], t.shape()[1]);
                    let dst = accum(grads, *src, n * m);
                    for i in 0..n {
                        for j in 0..m {
                            dst[i * m + j] += g[j * n + i];
                        }
                    }
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if self.ng(*a) {
                    let dst = accum(grads, *a, g.len());
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.ng(*b) {
                    let nb = val(*b).numel();
                    let dst = accum(grads, *b, nb);
                    for (k, v) in g.iter().enumerate() {
                        dst[k % nb] += sign * v;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let nb = tb.numel();
                if self.ng(*a) {
                    let dst = accum(grads, *a, g.len());
                    for (k, v) in g.iter().enumerate() {
                        dst[k] += v * tb.data()[k % nb];
                    }
                }
                if self.ng(*b) {
                    let dst = accum(grads, *b, nb);
                    for (k, v) in g.iter().enumerate() {
                        dst[k % nb] += v * ta.data()[k];
                    }
                }
            }
            Op::Scale { src, c } => {
                let dst = accum(grads, *src, g.len());
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
            }
            Op::AddScalar { src } | Op::Reshape { src } => {
                let dst = accum(grads, *src, g.len());
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Exp { src } => {
                let y = node.value.data();
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    dst[k] += g[k] * y[k];
                }
            }
            Op::Log { src } => {
                let x = val(*src).data();
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    dst[k] += g[k] / x[k];
                }
            }
            Op::Sigmoid { src } => {
                let y = node.value.data();
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    dst[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
            Op::Tanh { src } => {
                let y = node.value.data();
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    dst[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
            Op::Relu { src } => {
                let x = val(*src).data();
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    if x[k] > 0.0 {
                        dst[k] += g[k];
                    }
                }
            }
            Op::Softmax { src } => {
                let y = &node.value;
                let d = y.last_dim();
                let dst = accum(grads, *src, g.len());
                for (r, yr) in y.data().chunks(d).enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dst[r * d + j] += yr[j] * (gr[j] - dotp);
                    }
                }
            }
            Op::LayerNorm { src, inv_std } => {
                let y = &node.value;
                let d = y.last_dim();
                let dn = d as f64;
                let dst = accum(grads, *src, g.len());
                for (r, yr) in y.data().chunks(d).enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let gsum: f64 = gr.iter().sum();
                    let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let is = inv_std[r];
                    for j in 0..d {
                        dst[r * d + j] += is / dn * (dn * gr[j] - gsum - yr[j] * gy);
                    }
                }
            }
            Op::Concat { srcs, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &s in srcs {
                    let len = val(s).shape()[*axis];
                    if self.ng(s) {
                        let dst = accum(grads, s, outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            let chunk = &g[from..from + len * inner];
                            dst[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(chunk)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += len;
                }
            }
            Op::Sum { src } => {
                let n = val(*src).numel();
                let dst = accum(grads, *src, n);
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { src } => {
                let n = val(*src).numel();
                let dst = accum(grads, *src, n);
                let v = g[0] / n as f64;
                dst.iter_mut().for_each(|d| *d += v);
            }
            Op::SumAxis { src, axis } => {
                let t = val(*src);
                let (outer, n, inner) = split_axis(t.shape(), *axis);
                let dst = accum(grads, *src, t.numel());
                for o in 0..outer {
                    let gr = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let off = (o * n + k) * inner;
                        dst[off..off + inner].iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::SqNorm { src } => {
                let x = val(*src).data();
                let dst = accum(grads, *src, x.len());
                for k in 0..x.len() {
                    dst[k] += 2.0 * x[k] * g[0];
                }
            }
            Op::L1Norm { src } => {
                let x = val(*src).data();
                let dst = accum(grads, *src, x.len());
                for k in 0..x.len() {
                    dst[k] += sign0(x[k]) * g[0];
                }
            }
            Op::Dropout { src, mask } => {
                let dst = accum(grads, *src, g.len());
                for k in 0..g.len() {
                    dst[k] += g[k] * mask[k];
                }
            }
            Op::PairwiseSqDist { a, b } | Op::PairwiseL1 { a, b } => {
                let l1 = matches!(node.op, Op::PairwiseL1 { .. });
                let (ta, tb) = (val(*a), val(*b));
                let (n, m, d) = (ta.shape()[0], tb.shape()[0], ta.shape()[1]);
                let mut ga = self.ng(*a).then(|| vec![0.0; n * d]);
                let mut gb = self.ng(*b).then(|| vec![0.0; m * d]);
                for i in 0..n {
                    let x = ta.row(i);
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let y = tb.row(j);
                        for k in 0..d {
                            let diff = x[k] - y[k];
                            let dv = if l1 { sign0(diff) } else { 2.0 * diff } * gij;
                            if let Some(ga) = ga.as_mut() {
                                ga[i * d + k] += dv;
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[j * d + k] -= dv;
                            }
                        }
                    }
                }
                if let Some(ga) = ga {
                    let dst = accum(grads, *a, n * d);
                    dst.iter_mut().zip(&ga).for_each(|(d, v)| *d += v);
                }
                if let Some(gb) = gb {
                    let dst = accum(grads, *b, m * d);
                    dst.iter_mut().zip(&gb).for_each(|(d, v)| *d += v);
                }
            }
            Op::NormalizeRows { src, norms } => {
                let y = &node.value;
                let d = y.last_dim();
                let dst = accum(grads, *src, g.len());
                for (r, yr) in y.data().chunks(d).enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dst[r * d + j] += (gr[j] - yr[j] * gy) / norms[r];
                    }
                }
            }
            Op::BceWithLogits {
                src,
                labels,
                weights,
                wsum,
            } => {
                let x = val(*src).data();
                let dst = accum(grads, *src, x.len());
                for k in 0..x.len() {
                    dst[k] += g[0] * weights[k] * (sigmoid(x[k]) - labels[k]) / wsum;
                }
            }
            Op::PrefixMean { src } => {
                let t = val(*src);
                let (b, steps, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
                let dst = accum(grads, *src, t.numel());
                let mut acc = vec![0.0; d];
                for s in 0..b {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for k in (0..steps).rev() {
                        let off = (s * steps + k) * d;
                        let inv = 1.0 / (k + 1) as f64;
                        for j in 0..d {
                            acc[j] += g[off + j] * inv;
                            dst[off + j] += acc[j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
