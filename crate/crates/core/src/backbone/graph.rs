//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends
//! one node holding its value plus whatever it needs for the backward pass;
//! [`Graph::backward`] walks the tape in reverse and returns per-node
//! gradients, which [`Graph::accumulate_into`] folds into the parameter store.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One query block attending to one key block inside flattened row buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

/// How the rows of a flattened batch group into independent sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionLayout {
    pub segments: Vec<Segment>,
    pub causal: bool,
}

impl AttentionLayout {
    pub fn single(q_len: usize, k_len: usize, causal: bool) -> Self {
        Self::from_lengths(&[q_len], &[k_len], causal)
    }

    /// Pair the i-th query sequence with the i-th key sequence.
    pub fn from_lengths(q_lens: &[usize], k_lens: &[usize], causal: bool) -> Self {
        assert_eq!(q_lens.len(), k_lens.len());
        let mut segments = Vec::with_capacity(q_lens.len());
        let (mut qs, mut ks) = (0, 0);
        for (&q_len, &k_len) in q_lens.iter().zip(k_lens) {
            segments.push(Segment {
                q_start: qs,
                q_len,
                k_start: ks,
                k_len,
            });
            qs += q_len;
            ks += k_len;
        }
        AttentionLayout { segments, causal }
    }

    pub fn q_rows(&self) -> usize {
        self.segments.iter().map(|s| s.q_len).sum()
    }

    pub fn k_rows(&self) -> usize {
        self.segments.iter().map(|s| s.k_len).sum()
    }

    fn masked(&self, seg: &Segment, i: usize, j: usize) -> bool {
        self.causal && j + seg.q_len > i + seg.k_len
    }
}

enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f32),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: f32,
        layout: AttentionLayout,
        probs: Vec<f32>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: f32,
        probs: Vec<f32>,
    },
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<(usize, usize)>),
    CosineDistance {
        a: Var,
        b: Var,
        norms: Vec<(f32, f32)>,
    },
    Mean(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    InterleaveHeads(Var, Var, usize),
    Dropout(Var, Vec<f32>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Input | Param => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulCol(a, b) => {
                vec![*a, *b]
            }
            ConcatCols(a, b) | InterleaveHeads(a, b, _) => vec![*a, *b],
            Affine(a, _) | Abs(a) | Relu(a) | Sigmoid(a) | Softmax(a) | Mean(a) | Sum(a) => {
                vec![*a]
            }
            GatherRows(a, _) | SegmentSum(a, _) | Dropout(a, _) => vec![*a],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Attention { q, k, v, .. } => vec![*q, *k, *v],
            CrossEntropy { logits, .. } => vec![*logits],
            CosineDistance { a, b, .. } => vec![*a, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
    rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Gradient-recording graph with dropout disabled.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            rng: None,
        }
    }

    /// Forward-only graph; nothing is differentiable.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Gradient-recording graph with dropout driven by `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = self.grad_enabled
            && match &op {
                Op::Constant => false,
                Op::Input => true,
                Op::Param => true,
                other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// A leaf that receives a gradient without belonging to a parameter store.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf for a stored parameter; repeated calls reuse the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.frozen {
            self.constant(p.value.clone())
        } else {
            self.push(p.value.clone(), Op::Param)
        };
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(t.shape(), data).expect("same shape");
        self.push(out, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, op))
    }

    /// `[m x k] * [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast a `[n]` vector over every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rank() != 1 || tb.len() != ta.cols() {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % n])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// Scale row `i` of `a` by the scalar `col[i]`; `col` is `[rows x 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(Error::dim("mul_col", ta.shape(), tc.shape()));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tc.data()[i / n])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    /// `alpha * x + beta`.
    pub fn affine(&mut self, x: Var, alpha: f32, beta: f32) -> Var {
        self.unary(x, |v| alpha * v + beta, Op::Affine(x, alpha))
    }

    pub fn scale(&mut self, x: Var, alpha: f32) -> Var {
        self.affine(x, alpha, 0.0)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f32::abs, Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax along the last axis. `mask[i] == true` excludes element `i`
    /// (same layout as `x`); masked outputs are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        if let Some(m) = mask {
            if m.len() != t.len() {
                return Err(Error::dim("softmax mask", t.shape(), &[m.len()]));
            }
        }
        let n = t.cols();
        let mut out = vec![0.0; t.len()];
        for (r, (src, dst)) in t.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| !m[r * n + j]);
            softmax_row(src, dst, keep).ok_or(Error::DegenerateMask { slice: r })?;
        }
        let out = Tensor::new(t.shape(), out)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Per-row normalization with population variance, then `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        for p in [gamma, beta] {
            let s = self.shape(p);
            if s != [n] {
                return Err(Error::dim("layer_norm", self.shape(x), s));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.rows();
        let mut xhat = vec![0.0; t.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; t.len()];
        for r in 0..rows {
            let row = &t.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let rs = if var + eps > 0.0 {
                1.0 / (var + eps).sqrt()
            } else {
                0.0
            };
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q [Nq x H*dq]`, `k [Nk x H*dq]`, `v [Nk x H*dv]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: &AttentionLayout,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 {
            return Err(Error::dim("attention", sq, sk));
        }
        if sq[1] != sk[1] || sq[1] % heads != 0 || sv[1] % heads != 0 {
            return Err(Error::dim("attention", sq, sk));
        }
        if sk[0] != sv[0] || layout.q_rows() != sq[0] || layout.k_rows() != sk[0] {
            return Err(Error::dim("attention layout", sq, sv));
        }
        let (dq, dv) = (sq[1] / heads, sv[1] / heads);
        let scale = 1.0 / (dq as f32).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let (qw, vw) = (sq[1], sv[1]);
        let total: usize = layout
            .segments
            .iter()
            .map(|s| heads * s.q_len * s.k_len)
            .sum();
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; sq[0] * vw];
        let mut off = 0;
        let mut scores = Vec::new();
        for seg in &layout.segments {
            for h in 0..heads {
                for i in 0..seg.q_len {
                    let qi = &qd[(seg.q_start + i) * qw + h * dq..][..dq];
                    scores.clear();
                    for j in 0..seg.k_len {
                        let kj = &kd[(seg.k_start + j) * qw + h * dq..][..dq];
                        scores.push(dot(qi, kj) * scale);
                    }
                    let p = &mut probs[off..off + seg.k_len];
                    softmax_row(&scores, p, |j| !layout.masked(seg, i, j))
                        .ok_or(Error::DegenerateMask { slice: i })?;
                    let o = &mut out[(seg.q_start + i) * vw + h * dv..][..dv];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj != 0.0 {
                            let vj = &vd[(seg.k_start + j) * vw + h * dv..][..dv];
                            for (oo, &vv) in o.iter_mut().zip(vj) {
                                *oo += pj * vv;
                            }
                        }
                    }
                    off += seg.k_len;
                }
            }
        }
        let out = Tensor::new(&[sq[0], vw], out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                layout: layout.clone(),
                probs,
            },
        ))
    }

    /// Attention weights of an attention node as `[segment][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<Vec<Vec<f32>>>>> {
        let Op::Attention {
            heads,
            layout,
            probs,
            ..
        } = &self.nodes[v.0].op
        else {
            return None;
        };
        let mut off = 0;
        let mut res = Vec::new();
        for seg in &layout.segments {
            let mut per_head = Vec::new();
            for _ in 0..*heads {
                let mut rows = Vec::new();
                for _ in 0..seg.q_len {
                    rows.push(probs[off..off + seg.k_len].to_vec());
                    off += seg.k_len;
                }
                per_head.push(rows);
            }
            res.push(per_head);
        }
        Some(res)
    }

    /// Mean token cross-entropy of `logits [n x c]` with optional label
    /// smoothing `eps`: the target distribution is `(1-eps)` on the gold class
    /// plus `eps / c` spread uniformly.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f32) -> Result<Var> {
        let t = self.value(logits);
        let c = t.cols();
        if t.rows() != targets.len() {
            return Err(Error::dim("cross_entropy", t.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::Label {
                label: bad,
                classes: c,
            });
        }
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0f64;
        for (r, (&y, row)) in targets.iter().zip(t.data().chunks(c)).enumerate() {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            let nll = (lse - row[y]) as f64;
            let mean_nll = (lse - row.iter().sum::<f32>() / c as f32) as f64;
            loss += (1.0 - smoothing as f64) * nll + smoothing as f64 * mean_nll;
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let loss = (loss / targets.len() as f64) as f32;
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite cross-entropy".into()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
        ))
    }

    /// Rows `ids` of `table`; used for embedding lookup and token selection.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, n) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(Error::dim("gather_rows", t.shape(), &[0]));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= rows {
                return Err(Error::Vocabulary { id, size: rows });
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(&[ids.len(), n], out)?;
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec())))
    }

    /// Sum of the rows in each `(start, len)` segment; `[segments x cols]`.
    pub fn segment_sum(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        if segments.is_empty() {
            return Err(Error::Data("sum over an empty set of sequences".into()));
        }
        let mut out = vec![0.0; segments.len() * n];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                return Err(Error::Data("sum over an empty sequence".into()));
            }
            if start + len > t.rows() {
                return Err(Error::dim("segment_sum", t.shape(), &[start + len]));
            }
            for r in start..start + len {
                for (o, &v) in out[s * n..(s + 1) * n].iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
        }
        let out = Tensor::new(&[segments.len(), n], out)?;
        Ok(self.push(out, Op::SegmentSum(x, segments.to_vec())))
    }

    /// Row-wise `1 - cos(a_i, b_i)`; output `[rows]`.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_distance", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ta.rows());
        let mut norms = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let (x, y) = (ta.row(r), tb.row(r));
            let (na, nb) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::DegenerateVector(format!("cosine_distance row {r}")));
            }
            out.push(1.0 - dot(x, y) / (na * nb));
            norms.push((na, nb));
        }
        let out = Tensor::new(&[ta.rows()], out)?;
        Ok(self.push(out, Op::CosineDistance { a, b, norms }))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m as f32), Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum(x))
    }

    /// `[m x p] ++ [m x q] -> [m x (p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.interleave(a, b, 1, "concat_cols")?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Concatenate per head: head `h` of the result is `[a_h ; b_h]`.
    pub fn interleave_heads(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        let t = self.interleave(a, b, heads, "interleave_heads")?;
        Ok(self.push(t, Op::InterleaveHeads(a, b, heads)))
    }

    fn interleave(&self, a: Var, b: Var, heads: usize, op: &'static str) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2
            || tb.rank() != 2
            || ta.rows() != tb.rows()
            || ta.cols() % heads != 0
            || tb.cols() % heads != 0
        {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let (p, q) = (ta.cols() / heads, tb.cols() / heads);
        let w = ta.cols() + tb.cols();
        let mut out = Vec::with_capacity(ta.rows() * w);
        for r in 0..ta.rows() {
            let (ra, rb) = (ta.row(r), tb.row(r));
            for h in 0..heads {
                out.extend_from_slice(&ra[h * p..(h + 1) * p]);
                out.extend_from_slice(&rb[h * q..(h + 1) * q]);
            }
        }
        Tensor::new(&[ta.rows(), w], out)
    }

    /// Inverted dropout; identity unless the graph is in training mode.
    pub fn dropout(&mut self, x: Var, p: f32) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let t = &self.nodes[x.0].value;
        let mask: Vec<f32> = (0..t.len())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(t.shape(), data).expect("same shape");
        self.push(out, Op::Dropout(x, mask))
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].needs_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Add the gradients of every parameter leaf into `store`.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn backprop_node(&self, idx: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        // Returns the (lazily zeroed) gradient buffer of an input.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(a) {
                    let bd = self.value(*b).data();
                    gemm(m, n, k, g, false, bd, true, acc!(*a), true);
                }
                if needs(b) {
                    let ad = self.value(*a).data();
                    gemm(k, m, n, ad, true, g, false, acc!(*b), true);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if needs(a) {
                    axpy(acc!(*a), g, 1.0);
                }
                if needs(b) {
                    axpy(acc!(*b), g, sign);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let bd = self.value(*b).data();
                    for ((d, &gg), &y) in acc!(*a).iter_mut().zip(g).zip(bd) {
                        *d += gg * y;
                    }
                }
                if needs(b) {
                    let ad = self.value(*a).data();
                    for ((d, &gg), &x) in acc!(*b).iter_mut().zip(g).zip(ad) {
                        *d += gg * x;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(a) {
                    axpy(acc!(*a), g, 1.0);
                }
                if needs(bias) {
                    let n = out.cols();
                    let db = acc!(*bias);
                    for row in g.chunks(n) {
                        axpy(db, row, 1.0);
                    }
                }
            }
            Op::MulCol(a, col) => {
                let n = out.cols();
                if needs(a) {
                    let c = self.value(*col).data();
                    for (i, (d, &gg)) in acc!(*a).iter_mut().zip(g).enumerate() {
                        *d += gg * c[i / n];
                    }
                }
                if needs(col) {
                    let ad = self.value(*a).data();
                    let dc = acc!(*col);
                    for (r, (grow, arow)) in g.chunks(n).zip(ad.chunks(n)).enumerate() {
                        dc[r] += dot(grow, arow);
                    }
                }
            }
            Op::Affine(x, alpha) => axpy(acc!(*x), g, *alpha),
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                for ((d, &gg), &v) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    if v > 0.0 {
                        *d += gg;
                    } else if v < 0.0 {
                        *d -= gg;
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                for ((d, &gg), &v) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    if v > 0.0 {
                        *d += gg;
                    }
                }
            }
            Op::Sigmoid(x) => {
                for ((d, &gg), &y) in acc!(*x).iter_mut().zip(g).zip(out.data()) {
                    *d += gg * y * (1.0 - y);
                }
            }
            Op::Softmax(x) => {
                let n = out.cols();
                let dx = acc!(*x);
                for ((drow, grow), yrow) in
                    dx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                {
                    let s = dot(grow, yrow);
                    for ((d, &gg), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gg - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = out.cols();
                let gm = self.value(*gamma).data();
                if needs(x) {
                    let dx = acc!(*x);
                    let mut dxh = vec![0.0; n];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let grow = &g[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxh[j] = grow[j] * gm[j];
                        }
                        let m1 = dxh.iter().sum::<f32>() / n as f32;
                        let m2 = dot(&dxh, hrow) / n as f32;
                        for j in 0..n {
                            dx[r * n + j] += rs * (dxh[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
                if needs(gamma) {
                    let dg = acc!(*gamma);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if needs(beta) {
                    let db = acc!(*beta);
                    for grow in g.chunks(n) {
                        axpy(db, grow, 1.0);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                layout,
                probs,
            } => self.backprop_attention(g, grads, (*q, *k, *v), *heads, *scale, layout, probs),
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f32;
                let uniform = smoothing / c as f32;
                let dl = acc!(*logits);
                for (r, &y) in targets.iter().enumerate() {
                    for j in 0..c {
                        let mut t = uniform;
                        if j == y {
                            t += 1.0 - smoothing;
                        }
                        dl[r * c + j] += scale * (probs[r * c + j] - t);
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let n = out.cols();
                let dt = acc!(*table);
                for (grow, &id) in g.chunks(n).zip(ids) {
                    axpy(&mut dt[id * n..(id + 1) * n], grow, 1.0);
                }
            }
            Op::SegmentSum(x, segs) => {
                let n = out.cols();
                let dx = acc!(*x);
                for (grow, &(start, len)) in g.chunks(n).zip(segs) {
                    for r in start..start + len {
                        axpy(&mut dx[r * n..(r + 1) * n], grow, 1.0);
                    }
                }
            }
            Op::CosineDistance { a, b, norms } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                for (r, &(na, nb)) in norms.iter().enumerate() {
                    let (x, y) = (ta.row(r), tb.row(r));
                    let c = dot(x, y) / (na * nb);
                    // d(1 - c)/dx = -(y / (na nb) - c x / na^2)
                    if needs(a) {
                        let da = &mut acc!(*a)[r * n..(r + 1) * n];
                        for j in 0..n {
                            da[j] -= g[r] * (y[j] / (na * nb) - c * x[j] / (na * na));
                        }
                    }
                    if needs(b) {
                        let db = &mut acc!(*b)[r * n..(r + 1) * n];
                        for j in 0..n {
                            db[j] -= g[r] * (x[j] / (na * nb) - c * y[j] / (nb * nb));
                        }
                    }
                }
            }
            Op::Mean(x) => {
                let dx = acc!(*x);
                let s = g[0] / dx.len() as f32;
                dx.iter_mut().for_each(|d| *d += s);
            }
            Op::Sum(x) => {
                acc!(*x).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::ConcatCols(a, b) => self.backprop_interleave(g, grads, *a, *b, 1),
            Op::InterleaveHeads(a, b, h) => self.backprop_interleave(g, grads, *a, *b, *h),
            Op::Dropout(x, mask) => {
                for ((d, &gg), &m) in acc!(*x).iter_mut().zip(g).zip(mask) {
                    *d += gg * m;
                }
            }
        }
    }

    fn backprop_interleave(
        &self,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
        a: Var,
        b: Var,
        heads: usize,
    ) {
        let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
        let (p, q) = (ca / heads, cb / heads);
        let w = ca + cb;
        for (v, width, off, len) in [(a, ca, 0, p), (b, cb, p, q)] {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            let n = self.nodes[v.0].value.len();
            let d = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (r, grow) in g.chunks(w).enumerate() {
                for h in 0..heads {
                    let src = &grow[h * (p + q) + off..][..len];
                    axpy(&mut d[r * width + h * len..][..len], src, 1.0);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        scale: f32,
        layout: &AttentionLayout,
        probs: &[f32],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (qw, vw) = (qt.cols(), vt.cols());
        let (dq, dv) = (qw / heads, vw / heads);
        let mut gq = vec![0.0; qt.len()];
        let mut gk = vec![0.0; kt.len()];
        let mut gv = vec![0.0; vt.len()];
        let mut dp = Vec::new();
        let mut off = 0;
        for seg in &layout.segments {
            for h in 0..heads {
                for i in 0..seg.q_len {
                    let p = &probs[off..off + seg.k_len];
                    off += seg.k_len;
                    let qrow = (seg.q_start + i) * qw + h * dq;
                    let go = &g[(seg.q_start + i) * vw + h * dv..][..dv];
                    dp.clear();
                    for (j, &pj) in p.iter().enumerate() {
                        let vrow = (seg.k_start + j) * vw + h * dv;
                        dp.push(dot(go, &vt.data()[vrow..vrow + dv]));
                        if pj != 0.0 {
                            axpy(&mut gv[vrow..vrow + dv], go, pj);
                        }
                    }
                    let s = dot(&dp, p);
                    for (j, &pj) in p.iter().enumerate() {
                        let ds = pj * (dp[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = (seg.k_start + j) * qw + h * dq;
                        axpy(&mut gq[qrow..qrow + dq], &kt.data()[krow..krow + dq], ds);
                        axpy(&mut gk[krow..krow + dq], &qt.data()[qrow..qrow + dq], ds);
                    }
                }
            }
        }
        for (var, buf) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[var.0].needs_grad {
                match &mut grads[var.0] {
                    Some(d) => axpy(d, &buf, 1.0),
                    slot @ None => *slot = Some(buf),
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f32], x: &[f32], alpha: f32) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of the kept entries of `src` into `dst`; `None` when nothing is kept.
fn softmax_row(src: &[f32], dst: &mut [f32], keep: impl Fn(usize) -> bool) -> Option<()> {
    let max = src
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &v)| v)
        .fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (j, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
        *d = if keep(j) { (s - max).exp() } else { 0.0 };
        sum += *d;
    }
    dst.iter_mut().for_each(|d| *d /= sum);
    Some(())
}
