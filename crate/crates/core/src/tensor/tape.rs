//! Wengert-list autodiff.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run its backward rule. Nodes are only ever appended, so a node's
//! inputs always have smaller indices and a single reverse sweep visits each
//! operation exactly once.

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    SplitHeads {
        input: Var,
        heads: usize,
    },
    MergeHeads {
        input: Var,
        heads: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<S>,
    },
    Gather {
        input: Var,
        positions: Vec<usize>,
    },
    Sum(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::Dropout { .. } => "dropout",
            Op::Gather { .. } => "gather_positions",
            Op::Sum(..) => "sum",
            Op::MeanAxis { .. } => "mean_axis",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Ordered record of executed operations.
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn softmax_slice<S: Scalar>(x: &[S], out: &mut [S], stride: usize, len: usize) {
    let mut max = x[0];
    for j in 1..len {
        max = max.max(x[j * stride]);
    }
    let mut total = S::zero();
    for j in 0..len {
        let e = (x[j * stride] - max).exp();
        out[j * stride] = e;
        total = total + e;
    }
    for j in 0..len {
        out[j * stride] = out[j * stride] / total;
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor; gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<S>) -> Var {
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable input.
    pub fn variable(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn record(&mut self, mut value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(op.name())?;
        value.requires_grad = inputs.iter().any(|&v| self.needs_grad(v));
        value.grad = None;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.record(Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Batched `[B×m×k] · [B×k×n]`, or `[B×m×k] · [B×n×k]ᵀ` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (inner_b, n) = if sb.len() == 3 {
            if transpose_b {
                (sb[2], sb[1])
            } else {
                (sb[1], sb[2])
            }
        } else {
            (0, 0)
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != inner_b {
            return Err(Error::Dimension {
                op: "batch_matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let mut out = vec![S::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let ai = &da[i * m * k..(i + 1) * m * k];
            let bi = &db[i * k * n..(i + 1) * k * n];
            let ci = &mut out[i * m * n..(i + 1) * m * n];
            if transpose_b {
                gemm_nt(ai, bi, ci, m, k, n);
            } else {
                gemm_nn(ai, bi, ci, m, k, n);
            }
        }
        self.record(
            Tensor::new([batch, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.record(Tensor::new(shape, out)?, Op::Add(a, b), &[a, b])
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Dimension {
                op: "add_broadcast",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bias = self.value(b).data();
        let out = self
            .value(a)
            .data()
            .chunks(bias.len())
            .flat_map(|row| row.iter().zip(bias).map(|(&x, &y)| x + y))
            .collect();
        let shape = sa.to_vec();
        self.record(Tensor::new(shape, out)?, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.record(Tensor::new(shape, out)?, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var> {
        let out = self.value(a).data().iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.record(Tensor::new(shape, out)?, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let shape = self.shape(a).to_vec();
        self.record(Tensor::new(shape, out)?, Op::Relu(a), &[a])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_layout(axis)?;
        let mut out = vec![S::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                softmax_slice(&x.data()[base..], &mut out[base..], inner, len);
            }
        }
        let shape = x.shape().to_vec();
        self.record(
            Tensor::new(shape, out)?,
            Op::Softmax { input: a, axis },
            &[a],
        )
    }

    /// Softmax over the last axis of attention scores `[batch·heads × queries × keys]`,
    /// where keys flagged invalid in `key_valid[batch]` get probability exactly zero
    /// (the `-inf` score convention, without materializing infinities).
    pub fn masked_softmax(
        &mut self,
        scores: Var,
        key_valid: &[Vec<bool>],
        heads: usize,
    ) -> Result<Var> {
        let x = self.value(scores);
        let shape = x.shape().to_vec();
        if shape.len() != 3 || heads == 0 || shape[0] != key_valid.len() * heads {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![key_valid.len(), heads],
            });
        }
        let (queries, keys) = (shape[1], shape[2]);
        let mut out = vec![S::zero(); x.len()];
        for (bh, (xs, ys)) in x
            .data()
            .chunks(queries * keys)
            .zip(out.chunks_mut(queries * keys))
            .enumerate()
        {
            let valid = &key_valid[bh / heads];
            if valid.len() != keys {
                return Err(Error::Dimension {
                    op: "masked_softmax",
                    lhs: shape.clone(),
                    rhs: vec![valid.len()],
                });
            }
            if !valid.iter().any(|&v| v) {
                return Err(Error::contract(
                    "attention row with every key position masked",
                ));
            }
            for (row, out_row) in xs.chunks(keys).zip(ys.chunks_mut(keys)) {
                let mut max = S::neg_infinity();
                for (j, &v) in row.iter().enumerate() {
                    if valid[j] {
                        max = max.max(v);
                    }
                }
                let mut total = S::zero();
                for j in 0..keys {
                    if valid[j] {
                        let e = (row[j] - max).exp();
                        out_row[j] = e;
                        total = total + e;
                    }
                }
                for j in 0..keys {
                    out_row[j] = out_row[j] / total;
                }
            }
        }
        let axis = 2;
        self.record(
            Tensor::new(shape, out)?,
            Op::Softmax {
                input: scores,
                axis,
            },
            &[scores],
        )
    }

    /// Normalizes each slice along the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::contract(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or(Error::EmptyDimension("layer_norm"))?;
        if d == 0 {
            return Err(Error::EmptyDimension("layer_norm"));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let eps = S::from_f64_lossy(eps);
        let d_s = S::from_usize(d).unwrap();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let xs = self.value(x).data();
        let rows = xs.len() / d;
        let mut normalized = vec![S::zero(); xs.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / d_s;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / d_s;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let n = (row[j] - mean) * inv;
                normalized[r * d + j] = n;
                out[r * d + j] = n * g[j] + b[j];
            }
        }
        self.record(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat(&parts, axis)?;
        self.record(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.record(value, Op::Reshape(a), &[a])
    }

    /// `[b×s×d]` → `[(b·heads)×s×(d/heads)]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || heads == 0 || sa[2] % heads != 0 {
            return Err(Error::Dimension {
                op: "split_heads",
                lhs: sa,
                rhs: vec![heads],
            });
        }
        let (b, s, d) = (sa[0], sa[1], sa[2]);
        let dk = d / heads;
        let x = self.value(a).data();
        let mut out = vec![S::zero(); x.len()];
        for bi in 0..b {
            for si in 0..s {
                for h in 0..heads {
                    let src = (bi * s + si) * d + h * dk;
                    let dst = ((bi * heads + h) * s + si) * dk;
                    out[dst..dst + dk].copy_from_slice(&x[src..src + dk]);
                }
            }
        }
        self.record(
            Tensor::new([b * heads, s, dk], out)?,
            Op::SplitHeads { input: a, heads },
            &[a],
        )
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || heads == 0 || sa[0] % heads != 0 {
            return Err(Error::Dimension {
                op: "merge_heads",
                lhs: sa,
                rhs: vec![heads],
            });
        }
        let (b, s, dk) = (sa[0] / heads, sa[1], sa[2]);
        let d = dk * heads;
        let x = self.value(a).data();
        let mut out = vec![S::zero(); x.len()];
        for bi in 0..b {
            for si in 0..s {
                for h in 0..heads {
                    let dst = (bi * s + si) * d + h * dk;
                    let src = ((bi * heads + h) * s + si) * dk;
                    out[dst..dst + dk].copy_from_slice(&x[src..src + dk]);
                }
            }
        }
        self.record(
            Tensor::new([b, s, d], out)?,
            Op::MergeHeads { input: a, heads },
            &[a],
        )
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = S::from_f64_lossy(1.0 / (1.0 - rate));
        let x = self.value(a);
        let mask: Vec<S> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = x.shape().to_vec();
        self.record(
            Tensor::new(shape, out)?,
            Op::Dropout { input: a, mask },
            &[a],
        )
    }

    /// Picks row `positions[i]` of sample `i` from `[b×s×d]`, giving `[b×d]`.
    pub fn gather_positions(&mut self, a: Var, positions: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || sa[0] != positions.len() {
            return Err(Error::Dimension {
                op: "gather_positions",
                lhs: sa,
                rhs: vec![positions.len()],
            });
        }
        let (b, s, d) = (sa[0], sa[1], sa[2]);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(b * d);
        for (bi, &p) in positions.iter().enumerate() {
            if p >= s {
                return Err(Error::Index {
                    what: "sequence position",
                    index: p,
                    limit: s,
                });
            }
            let start = (bi * s + p) * d;
            out.extend_from_slice(&x[start..start + d]);
        }
        self.record(
            Tensor::new([b, d], out)?,
            Op::Gather {
                input: a,
                positions: positions.to_vec(),
            },
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum::<S>();
        self.record(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_layout(axis)?;
        let scale = S::one() / S::from_usize(len).unwrap();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc = *acc + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * scale);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.record(
            Tensor::new(shape, out)?,
            Op::MeanAxis { input: a, axis },
            &[a],
        )
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![labels.len()],
            });
        }
        let classes = sl[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let x = self.value(logits).data();
        let mut probs = vec![S::zero(); x.len()];
        let mut total = S::zero();
        for (r, (row, &label)) in x.chunks(classes).zip(labels).enumerate() {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum_exp = row.iter().map(|&v| (v - max).exp()).sum::<S>();
            let lse = max + sum_exp.ln();
            total = total + (lse - row[label]);
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = total / S::from_usize(labels.len()).unwrap();
        self.record(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Populates gradients of `loss` for every tracked value it depends on.
    /// Gradients add into any already present from earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.needs_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("backward of {}", node.op.name())));
            }
            self.apply_backward(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn apply_backward(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Gradient buffer of an input, or None when it is not tracked.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].value.requires_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
                } else {
                    None
                }
            }};
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = (val(*a).shape()[0], val(*a).shape()[1], val(*b).shape()[1]);
                if let Some(da) = slot!(*a) {
                    gemm_nt(g, val(*b).data(), da, m, n, k);
                }
                if let Some(db) = slot!(*b) {
                    gemm_tn(val(*a).data(), g, db, k, m, n);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = val(*a).shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = out.shape()[2];
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if let Some(da) = slot!(*a) {
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let bi = &bd[t * k * n..(t + 1) * k * n];
                        let dai = &mut da[t * m * k..(t + 1) * m * k];
                        if *transpose_b {
                            gemm_nn(gi, bi, dai, m, n, k);
                        } else {
                            gemm_nt(gi, bi, dai, m, n, k);
                        }
                    }
                }
                if let Some(db) = slot!(*b) {
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let ai = &ad[t * m * k..(t + 1) * m * k];
                        let dbi = &mut db[t * k * n..(t + 1) * k * n];
                        if *transpose_b {
                            gemm_tn(gi, ai, dbi, n, m, k);
                        } else {
                            gemm_tn(ai, gi, dbi, k, m, n);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = slot!(v) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if let Some(da) = slot!(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                }
                if let Some(db) = slot!(*b) {
                    let len = db.len();
                    for chunk in g.chunks(len) {
                        db.iter_mut().zip(chunk).for_each(|(d, &g)| *d = *d + g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if let Some(da) = slot!(*a) {
                    for ((d, &g), &y) in da.iter_mut().zip(g).zip(bd) {
                        *d = *d + g * y;
                    }
                }
                if let Some(db) = slot!(*b) {
                    for ((d, &g), &x) in db.iter_mut().zip(g).zip(ad) {
                        *d = *d + g * x;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(da) = slot!(*a) {
                    da.iter_mut()
                        .zip(g)
                        .for_each(|(d, &g)| *d = *d + g * *factor);
                }
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                if let Some(da) = slot!(*a) {
                    for ((d, &g), &x) in da.iter_mut().zip(g).zip(x) {
                        if x > S::zero() {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = out.axis_layout(*axis).expect("recorded axis");
                let y = out.data();
                if let Some(dx) = slot!(*input) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = S::zero();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dot = dot + g[idx] * y[idx];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                dx[idx] = dx[idx] + y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = val(*gain).len();
                let gw = val(*gain).data();
                if let Some(dgain) = slot!(*gain) {
                    for (gr, nr) in g.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            dgain[j] = dgain[j] + gr[j] * nr[j];
                        }
                    }
                }
                if let Some(dbias) = slot!(*bias) {
                    for gr in g.chunks(d) {
                        dbias.iter_mut().zip(gr).for_each(|(d, &g)| *d = *d + g);
                    }
                }
                if let Some(dx) = slot!(*input) {
                    let d_s = S::from_usize(d).unwrap();
                    for (r, (gr, nr)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                        let mut mean_dn = S::zero();
                        let mut mean_dn_n = S::zero();
                        for j in 0..d {
                            let dn = gr[j] * gw[j];
                            mean_dn = mean_dn + dn;
                            mean_dn_n = mean_dn_n + dn * nr[j];
                        }
                        mean_dn = mean_dn / d_s;
                        mean_dn_n = mean_dn_n / d_s;
                        for j in 0..d {
                            let dn = gr[j] * gw[j];
                            let idx = r * d + j;
                            dx[idx] = dx[idx] + inv_std[r] * (dn - mean_dn - nr[j] * mean_dn_n);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = out.axis_layout(*axis).expect("recorded axis");
                let mut offset = 0;
                for &v in inputs {
                    let extent = val(v).shape()[*axis];
                    if let Some(dv) = slot!(v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * extent * inner;
                            for j in 0..extent * inner {
                                dv[dst + j] = dv[dst + j] + g[src + j];
                            }
                        }
                    }
                    offset += extent;
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = slot!(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
                }
            }
            Op::SplitHeads { input, heads } => {
                let sx = val(*input).shape();
                let (b, s, d) = (sx[0], sx[1], sx[2]);
                let dk = d / heads;
                if let Some(dx) = slot!(*input) {
                    for bi in 0..b {
                        for si in 0..s {
                            for h in 0..*heads {
                                let xi = (bi * s + si) * d + h * dk;
                                let oi = ((bi * heads + h) * s + si) * dk;
                                for j in 0..dk {
                                    dx[xi + j] = dx[xi + j] + g[oi + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { input, heads } => {
                let so = out.shape();
                let (b, s, d) = (so[0], so[1], so[2]);
                let dk = d / heads;
                if let Some(dx) = slot!(*input) {
                    for bi in 0..b {
                        for si in 0..s {
                            for h in 0..*heads {
                                let oi = (bi * s + si) * d + h * dk;
                                let xi = ((bi * heads + h) * s + si) * dk;
                                for j in 0..dk {
                                    dx[xi + j] = dx[xi + j] + g[oi + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(dx) = slot!(*input) {
                    for ((d, &g), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d = *d + g * m;
                    }
                }
            }
            Op::Gather { input, positions } => {
                let sx = val(*input).shape();
                let (s, d) = (sx[1], sx[2]);
                if let Some(dx) = slot!(*input) {
                    for (bi, &p) in positions.iter().enumerate() {
                        let start = (bi * s + p) * d;
                        for j in 0..d {
                            dx[start + j] = dx[start + j] + g[bi * d + j];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot!(*a) {
                    da.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::MeanAxis { input, axis } => {
                let (outer, len, inner) = val(*input).axis_layout(*axis).expect("recorded axis");
                let scale = S::one() / S::from_usize(len).unwrap();
                if let Some(dx) = slot!(*input) {
                    for o in 0..outer {
                        for j in 0..len {
                            for t in 0..inner {
                                let idx = (o * len + j) * inner + t;
                                dx[idx] = dx[idx] + g[o * inner + t] * scale;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = val(*logits).shape()[1];
                let scale = g[0] / S::from_usize(labels.len()).unwrap();
                if let Some(dl) = slot!(*logits) {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let idx = r * classes + c;
                            let target = if c == label { S::one() } else { S::zero() };
                            dl[idx] = dl[idx] + (probs[idx] - target) * scale;
                        }
                    }
                }
            }
        }
    }
}
