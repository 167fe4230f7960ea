//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every input id is smaller
//! than the id of the node consuming it and a single reverse sweep over the
//! tape is a valid backward pass. Only nodes that depend on a parameter
//! receive gradients.

use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    /// Elementwise add; the right operand may be a row vector broadcast over rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    /// Row gather; embedding lookup is a gather from the embedding table.
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: Axis,
    },
    Slice {
        x: NodeId,
        axis: Axis,
        start: usize,
    },
    Transpose(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(NodeId, NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    MaskedFill {
        x: NodeId,
        mask: Vec<bool>,
    },
    Sum(NodeId),
    Mean(NodeId),
    MaxRows {
        x: NodeId,
        argmax: Vec<usize>,
    },
}

/// Matrix axis for slicing and concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Gradients of a scalar loss with respect to every parameter node.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// Removes and returns the gradient for `id`.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `out = a (m×k) · b (k×n)`, accumulated into `out`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// Trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Param, value, true);
        self.params.push(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f64> = if av.same_shape(bv) {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x + y)
                .collect()
        } else if bv.len() == av.cols() && bv.rows() == 1 {
            let c = av.cols();
            av.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.data()[i % c])
                .collect()
        } else {
            return Err(shape_err("add", av, bv));
        };
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("sub", av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("multiply", av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, ng))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(Op::Scale(a, factor), value, ng)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
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
        let value = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(Op::Softmax(a), value, ng)
    }

    /// Layer normalization along the last axis with population variance.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.len() != c {
            return Err(shape_err("layer-norm", xv, gv));
        }
        if bv.len() != c {
            return Err(shape_err("layer-norm", xv, bv));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            value,
            ng,
        ))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    fn unary(&mut self, a: NodeId, f: fn(f64) -> f64, op: Op) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(op, value, ng)
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::Shape {
                op: "embedding-lookup",
                lhs: tv.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        if ids.is_empty() {
            return Err(Error::Shape {
                op: "embedding-lookup",
                lhs: tv.shape().to_vec(),
                rhs: vec![0],
            });
        }
        let c = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= tv.rows() {
                return Err(Error::OutOfRange {
                    what: "embedding-lookup",
                    index: id,
                    limit: tv.rows(),
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Tensor::matrix(ids.len(), c, out)?;
        let ng = self.ng(&[table]);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
            ng,
        ))
    }

    /// Row gather from any matrix; same operation as [`Graph::embedding`].
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        self.embedding(x, rows)
    }

    /// Concatenates 2-D tensors along `axis`.
    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        let first = self.value(parts[0]);
        let (rows0, cols0) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let pv = self.value(p);
            let ok = pv.shape().len() == 2
                && first.shape().len() == 2
                && match axis {
                    Axis::Cols => pv.rows() == rows0,
                    Axis::Rows => pv.cols() == cols0,
                };
            if !ok {
                return Err(shape_err("concat", first, pv));
            }
        }
        let value = match axis {
            Axis::Cols => {
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut out = Vec::with_capacity(rows0 * total);
                for r in 0..rows0 {
                    for &p in parts {
                        out.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::matrix(rows0, total, out)?
            }
            Axis::Rows => {
                let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
                let mut out = Vec::with_capacity(total * cols0);
                for &p in parts {
                    out.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(total, cols0, out)?
            }
        };
        let ng = self.ng(parts);
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            value,
            ng,
        ))
    }

    /// Half-open slice `[start, end)` of a 2-D tensor along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: Axis, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let limit = match axis {
            Axis::Rows => rows,
            Axis::Cols => cols,
        };
        if xv.shape().len() != 2 || start >= end || end > limit {
            return Err(Error::Shape {
                op: "slice",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let value = match axis {
            Axis::Rows => Tensor::matrix(
                end - start,
                cols,
                xv.data()[start * cols..end * cols].to_vec(),
            )?,
            Axis::Cols => {
                let w = end - start;
                let mut out = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    out.extend_from_slice(&xv.row(r)[start..end]);
                }
                Tensor::matrix(rows, w, out)?
            }
        };
        let ng = self.ng(&[x]);
        Ok(self.push(Op::Slice { x, axis, start }, value, ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: xv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv.data()[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(Op::Transpose(x), value, ng))
    }

    /// Mean cross-entropy of softmax(`logits`) rows against class `targets`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::Shape {
                op: "cross-entropy-loss",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; rows * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::OutOfRange {
                    what: "cross-entropy-loss target",
                    index: t,
                    limit: c,
                });
            }
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[t];
        }
        let value = Tensor::scalar(loss / rows as f64);
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            value,
            ng,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if !pv.same_shape(tv) {
            return Err(shape_err("mean-squared-error-loss", pv, tv));
        }
        let n = pv.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let ng = self.ng(&[pred, target]);
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(loss), ng))
    }

    /// Multiplies by a caller-supplied mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Shape {
                op: "dropout",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(Op::Dropout { x, mask }, value, ng))
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, x: NodeId, mask: &[bool], fill: f64) -> Result<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::Shape {
                op: "masked-fill",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = xv
            .data()
            .iter()
            .zip(mask)
            .map(|(&a, &m)| if m { fill } else { a })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            value,
            ng,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(s), ng)
    }

    /// Column-wise maximum over rows, giving a `[1, cols]` tensor.
    pub fn max_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0; c];
        for r in 1..rows {
            for (j, v) in xv.row(r).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    argmax[j] = r;
                }
            }
        }
        let value = Tensor::matrix(1, c, best).expect("row vector");
        let ng = self.ng(&[x]);
        self.push(Op::MaxRows { x, argmax }, value, ng)
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for all parameters.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }

        let mut out = HashMap::with_capacity(self.params.len());
        for &p in &self.params {
            let g = grads
                .get_mut(p.0)
                .and_then(Option::take)
                .unwrap_or_else(|| self.value(p).zeros_like());
            out.insert(p, g);
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        let like =
            |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).expect("shape");
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, like(av, da));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, like(bv, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    let bv = self.value(*b);
                    if bv.len() == g.len() {
                        self.accumulate(grads, *b, like(bv, g.data().to_vec()));
                    } else {
                        let c = bv.len();
                        let mut db = vec![0.0; c];
                        for row in g.data().chunks(c) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.accumulate(grads, *b, like(bv, db));
                    }
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    let neg = g.data().iter().map(|v| -v).collect();
                    self.accumulate(grads, *b, like(g, neg));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, like(av, d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, like(bv, d));
                }
            }
            Op::Scale(a, f) => {
                let d = g.data().iter().map(|v| v * f).collect();
                self.accumulate(grads, *a, like(g, d));
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d
                    .chunks_mut(c)
                    .zip(out.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, *a, like(out, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = out.cols();
                let gv = self.value(*gain);
                if self.needs(*x) {
                    let mut dx = vec![0.0; out.len()];
                    for (r, rs) in rstd.iter().enumerate() {
                        let grow = &g.data()[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            let dh = grow[j] * gv.data()[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            let dh = grow[j] * gv.data()[j];
                            dx[r * c + j] = rs * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, like(out, dx));
                }
                if self.needs(*gain) {
                    let mut dg = vec![0.0; c];
                    for (gr, hr) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.accumulate(grads, *gain, like(gv, dg));
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for gr in g.data().chunks(c) {
                        for j in 0..c {
                            db[j] += gr[j];
                        }
                    }
                    let bv = self.value(*bias);
                    self.accumulate(grads, *bias, like(bv, db));
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gv, &x)| gv * gelu_grad(x))
                    .collect();
                self.accumulate(grads, *a, like(av, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *a, like(out, d));
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gv, &x)| {
                        if x > 0.0 {
                            *gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, like(av, d));
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = vec![0.0; tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g.data()[i * c..(i + 1) * c];
                    for (dv, s) in d[id * c..(id + 1) * c].iter_mut().zip(src) {
                        *dv += s;
                    }
                }
                self.accumulate(grads, *table, like(tv, d));
            }
            Op::Concat { parts, axis } => match axis {
                Axis::Cols => {
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        if self.needs(p) {
                            let mut d = Vec::with_capacity(pv.len());
                            for r in 0..out.rows() {
                                d.extend_from_slice(
                                    &g.data()[r * total + offset..r * total + offset + w],
                                );
                            }
                            self.accumulate(grads, p, like(pv, d));
                        }
                        offset += w;
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        if self.needs(p) {
                            let d = g.data()[offset..offset + pv.len()].to_vec();
                            self.accumulate(grads, p, like(pv, d));
                        }
                        offset += pv.len();
                    }
                }
            },
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.len()];
                match axis {
                    Axis::Rows => {
                        d[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        let w = g.cols();
                        for r in 0..xv.rows() {
                            d[r * cols + start..r * cols + start + w]
                                .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                        }
                    }
                }
                self.accumulate(grads, *x, like(xv, d));
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = g.data()[i * c + j];
                    }
                }
                let xv = self.value(*x);
                self.accumulate(grads, *x, like(xv, d));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.item() / targets.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= scale;
                }
                self.accumulate(grads, *logits, like(lv, d));
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let k = 2.0 * g.item() / pv.len() as f64;
                let diff: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(a, b)| k * (a - b))
                    .collect();
                if self.needs(*t) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accumulate(grads, *t, like(tv, neg));
                }
                self.accumulate(grads, *p, like(pv, diff));
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, like(out, d));
            }
            Op::MaskedFill { x, mask } => {
                let d = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&a, &m)| if m { 0.0 } else { a })
                    .collect();
                self.accumulate(grads, *x, like(out, d));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    Tensor::filled(xv.shape(), g.item() / xv.len() as f64),
                );
            }
            Op::MaxRows { x, argmax } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for (j, &r) in argmax.iter().enumerate() {
                    d[r * c + j] = g.data()[j];
                }
                self.accumulate(grads, *x, like(xv, d));
            }
        }
    }
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params.len())
            .finish()
    }
}
