//! Define-by-run tape. Every op appends a node holding its output value and
//! whatever it needs for the backward pass; `backward` replays the nodes in
//! reverse insertion order, which is a valid reverse topological order.

use std::collections::HashMap;

use rand::Rng;

use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Float),
    AddRow(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        gather: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<Float>,
        rstd: Vec<Float>,
    },
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SliceRows {
        x: Var,
        offset: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    MaskedSoftmax {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<Float>,
    },
    Dot(Var, Var),
    Maximum(Var, Var),
    MaxScalar(Var, Float),
    RowMaxOffDiag {
        x: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// Not shareable across threads while recording; build one tape per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Tensor>,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and saved intermediate.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.leaf_grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.numel(), value.shape().iter().product::<usize>());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node,
    /// so every use of θ in one step accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.requires_grad());
        self.params.insert(id, v);
        v
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(Float, Float) -> Float) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(Float) -> Float) -> Tensor {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: Float) -> Var {
        let out = self.map(a, |v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Elementwise maximum of two tensors; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("maximum", a, b)?;
        let out = self.zip_map(a, b, |p, q| if p >= q { p } else { q });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Maximum(a, b), rg))
    }

    /// `max(x, floor)` elementwise. Gradient flows only where `x > floor`.
    pub fn max_scalar(&mut self, a: Var, floor: Float) -> Var {
        let out = self.map(a, |v| if v > floor { v } else { floor });
        let rg = self.rg(a);
        self.push(out, Op::MaxScalar(a, floor), rg)
    }

    /// Adds a vector `b[n]` to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &c) in row.iter_mut().zip(bias) {
                *o += c;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    /// Matrix product of 2-D tensors, optionally transposing either side.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(dim_err("matmul", &sa, &sb));
        }
        self.batched(a, b, ta, tb, 1, [sa[0], sa[1]], [sb[0], sb[1]], "matmul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched matrix product over the leading axis of 3-D tensors.
    pub fn bmm(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err("bmm", &sa, &sb));
        }
        self.batched(
            a,
            b,
            false,
            tb,
            sa[0],
            [sa[1], sa[2]],
            [sb[1], sb[2]],
            "bmm",
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn batched(
        &mut self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        batch: usize,
        sa: [usize; 2],
        sb: [usize; 2],
        op: &'static str,
    ) -> Result<Var> {
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    view(sa[1], ta),
                    &bv[i * k * n..(i + 1) * k * n],
                    view(sb[1], tb),
                    &mut out[i * m * n..(i + 1) * m * n],
                    (n as isize, 1),
                );
            }
        }
        let shape = if batch == 1 && op == "matmul" {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::MatMul {
                a,
                b,
                ta,
                tb,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(dim_err("permute", &shape, axes));
        }
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let numel: usize = shape.iter().product();
        let mut gather = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        for _ in 0..numel {
            gather.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let src = self.value(x).data();
        let data = gather.iter().map(|&g| src[g]).collect();
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Permute { x, gather }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Float) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let rows = xv.numel() / n.max(1);
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<Float>() / n as Float;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / n as Float;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| {
            0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
        });
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, Float::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Selects rows of a 2-D tensor; embedding lookup is this op on a table.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(dim_err("gather_rows", &shape, &[index.len()]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::new(vec![index.len(), cols], data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::Index {
                what: "slice_rows",
                index: start + len,
                bound: shape.first().copied().unwrap_or(0) + 1,
            });
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::SliceRows {
                x,
                offset: start * inner,
            },
            rg,
        ))
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(dim_err("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<Float>() / v.numel() as Float;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Softmax over the last axis of `scores[batch * heads, q, k]`, where key
    /// `j` of sequence `b` participates iff `keep[b * k + j]`. Masked entries
    /// are exactly zero.
    pub fn masked_softmax(&mut self, scores: Var, keep: &[bool], heads: usize) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() != 3
            || heads == 0
            || !shape[0].is_multiple_of(heads)
            || keep.len() != shape[0] / heads * shape[2]
        {
            return Err(dim_err("masked_softmax", &shape, &[keep.len()]));
        }
        let (bh, q, k) = (shape[0], shape[1], shape[2]);
        let src = self.value(scores).data();
        let mut out = vec![0.0; src.len()];
        for g in 0..bh {
            let mask = &keep[(g / heads) * k..(g / heads + 1) * k];
            for r in 0..q {
                let base = (g * q + r) * k;
                let row = &src[base..base + k];
                let max = row
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
                    .fold(Float::NEG_INFINITY, Float::max);
                if max == Float::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for j in 0..k {
                    if mask[j] {
                        let e = (row[j] - max).exp();
                        out[base + j] = e;
                        total += e;
                    }
                }
                for o in &mut out[base..base + k] {
                    *o /= total;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(scores);
        Ok(self.push(out, Op::MaskedSoftmax { x: scores }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || shape[0] == 0 {
            return Err(dim_err("softmax_cross_entropy", &shape, &[targets.len()]));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index {
                what: "softmax_cross_entropy target",
                index: bad,
                bound: c,
            });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &src[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
            let total: Float = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            loss += log_z - row[t];
            for j in 0..c {
                probs[r * c + j] = (row[j] - log_z).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as Float),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("dot", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p * q)
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// For a square matrix, the per-row maximum over off-diagonal entries.
    /// Ties resolve to the smallest column index.
    pub fn row_max_off_diag(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != shape[1] || shape[0] < 2 {
            return Err(dim_err("row_max_off_diag", &shape, &shape));
        }
        let n = shape[0];
        let src = self.value(x).data();
        let mut argmax = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut best = if i == 0 { 1 } else { 0 };
            for j in 0..n {
                if j != i && src[i * n + j] > src[i * n + best] {
                    best = j;
                }
            }
            argmax.push(best);
            out.push(src[i * n + best]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::RowMaxOffDiag { x, argmax }, rg))
    }

    /// Multiplies by a Bernoulli keep-mask scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: Float, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let shape = self.shape(x).to_vec();
        let mask: Vec<Float> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < keep as f64 {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients accumulate into
    /// `store`; leaf gradients accumulate on the tape. Neither is zeroed here.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<Float>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(
        &mut self,
        i: usize,
        g: &[Float],
        grads: &mut [Option<Vec<Float>>],
        store: &mut ParamStore,
    ) {
        let nodes = &self.nodes;
        let rg = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }
        match &nodes[i].op {
            Op::Leaf => {
                let entry = self
                    .leaf_grads
                    .entry(i)
                    .or_insert_with(|| Tensor::zeros(nodes[i].value.shape().to_vec()));
                axpy(entry.data_mut(), 1.0, g);
            }
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::Add(a, b) => {
                if rg(*a) {
                    axpy(slot!(*a), 1.0, g);
                }
                if rg(*b) {
                    axpy(slot!(*b), 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    axpy(slot!(*a), 1.0, g);
                }
                if rg(*b) {
                    axpy(slot!(*b), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = val(*b);
                    for ((o, gi), bi) in slot!(*a).iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if rg(*b) {
                    let av = val(*a);
                    for ((o, gi), ai) in slot!(*b).iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => axpy(slot!(*a), *s, g),
            Op::AddRow(x, b) => {
                if rg(*x) {
                    axpy(slot!(*x), 1.0, g);
                }
                if rg(*b) {
                    let gb = slot!(*b);
                    let n = gb.len();
                    for row in g.chunks(n.max(1)) {
                        axpy(gb, 1.0, row);
                    }
                }
            }
            &Op::MatMul {
                a,
                b,
                ta,
                tb,
                batch,
                m,
                k,
                n,
            } => {
                let (sa_cols, sb_cols) = (
                    nodes[a.0].value.shape()[nodes[a.0].value.rank() - 1],
                    nodes[b.0].value.shape()[nodes[b.0].value.rank() - 1],
                );
                if rg(a) {
                    // d op(a) [m×k] = g [m×n] · op(b)ᵀ [n×k], written in a's layout.
                    let bv = val(b).to_vec();
                    let ga = slot!(a);
                    for t in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            (n as isize, 1),
                            &bv[t * k * n..(t + 1) * k * n],
                            view_t(sb_cols, tb),
                            &mut ga[t * m * k..(t + 1) * m * k],
                            view(sa_cols, ta),
                        );
                    }
                }
                if rg(b) {
                    // d op(b) [k×n] = op(a)ᵀ [k×m] · g [m×n], written in b's layout.
                    let av = val(a).to_vec();
                    let gb = slot!(b);
                    for t in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av[t * m * k..(t + 1) * m * k],
                            view_t(sa_cols, ta),
                            &g[t * m * n..(t + 1) * m * n],
                            (n as isize, 1),
                            &mut gb[t * k * n..(t + 1) * k * n],
                            view(sb_cols, tb),
                        );
                    }
                }
            }
            Op::Reshape(x) => axpy(slot!(*x), 1.0, g),
            Op::Permute { x, gather } => {
                let gx = slot!(*x);
                for (&src, gi) in gather.iter().zip(g) {
                    gx[src] += gi;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = val(*gain).len();
                if rg(*gain) {
                    let gg = slot!(*gain);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if rg(*bias) {
                    let gb = slot!(*bias);
                    for grow in g.chunks(n) {
                        axpy(gb, 1.0, grow);
                    }
                }
                if rg(*x) {
                    let gain_v = val(*gain).to_vec();
                    let gx = slot!(*x);
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_gh = 0.0;
                        let mut mean_ghh = 0.0;
                        for j in 0..n {
                            let gh = grow[j] * gain_v[j];
                            mean_gh += gh;
                            mean_ghh += gh * hrow[j];
                        }
                        mean_gh /= n as Float;
                        mean_ghh /= n as Float;
                        for j in 0..n {
                            let gh = grow[j] * gain_v[j];
                            gx[r * n + j] += rstd[r] * (gh - mean_gh - hrow[j] * mean_ghh);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).to_vec();
                for ((o, gi), v) in slot!(*x).iter_mut().zip(g).zip(xv) {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    *o += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).to_vec();
                for ((o, gi), v) in slot!(*x).iter_mut().zip(g).zip(xv) {
                    if v > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Tanh(x) => {
                let y = nodes[i].value.data();
                for ((o, gi), yi) in slot!(*x).iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::GatherRows { x, index } => {
                let cols = nodes[x.0].value.shape()[1];
                let gx = slot!(*x);
                for (r, &src) in index.iter().enumerate() {
                    axpy(
                        &mut gx[src * cols..(src + 1) * cols],
                        1.0,
                        &g[r * cols..(r + 1) * cols],
                    );
                }
            }
            Op::SliceRows { x, offset } => {
                let gx = slot!(*x);
                axpy(&mut gx[*offset..*offset + g.len()], 1.0, g);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    if rg(p) {
                        axpy(slot!(p), 1.0, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Sum(x) => {
                let gx = slot!(*x);
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean(x) => {
                let gx = slot!(*x);
                let s = g[0] / gx.len() as Float;
                for o in gx.iter_mut() {
                    *o += s;
                }
            }
            Op::MaskedSoftmax { x } => {
                let y = nodes[i].value.data();
                let k = *nodes[i].value.shape().last().unwrap();
                let gx = slot!(*x);
                for ((grow, yrow), orow) in g.chunks(k).zip(y.chunks(k)).zip(gx.chunks_mut(k)) {
                    let inner: Float = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        orow[j] += yrow[j] * (grow[j] - inner);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = nodes[logits.0].value.shape()[1];
                let s = g[0] / targets.len() as Float;
                let gl = slot!(*logits);
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        gl[r * c + j] += s * probs[r * c + j];
                    }
                    gl[r * c + t] -= s;
                }
            }
            Op::Dot(a, b) => {
                if rg(*a) {
                    let bv = val(*b).to_vec();
                    axpy(slot!(*a), g[0], &bv);
                }
                if rg(*b) {
                    let av = val(*a).to_vec();
                    axpy(slot!(*b), g[0], &av);
                }
            }
            Op::Maximum(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                if rg(*a) {
                    let ga = slot!(*a);
                    for j in 0..g.len() {
                        if av[j] >= bv[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                if rg(*b) {
                    let gb = slot!(*b);
                    for j in 0..g.len() {
                        if av[j] < bv[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::MaxScalar(x, floor) => {
                let xv = val(*x).to_vec();
                for ((o, gi), v) in slot!(*x).iter_mut().zip(g).zip(xv) {
                    if v > *floor {
                        *o += gi;
                    }
                }
            }
            Op::RowMaxOffDiag { x, argmax } => {
                let n = argmax.len();
                let gx = slot!(*x);
                for (r, &j) in argmax.iter().enumerate() {
                    gx[r * n + j] += g[r];
                }
            }
        }
    }
}

fn grad_slot<'g>(
    grads: &'g mut [Option<Vec<Float>>],
    nodes: &[Node],
    v: Var,
) -> &'g mut Vec<Float> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
}

const GELU_C: Float = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn axpy(y: &mut [Float], a: Float, x: &[Float]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Strides of a stored row-major matrix with `cols` columns, seen either
/// as-is or transposed.
fn view(cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Strides of the transpose of the logical view above.
fn view_t(cols: usize, transposed: bool) -> (isize, isize) {
    view(cols, !transposed)
}
