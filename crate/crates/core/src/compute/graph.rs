//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so node ids are a topological
//! order and the backward sweep simply walks them in reverse. Parameter
//! leaves borrow their values from the [`ParameterStore`]; gradients come
//! back as a [`Gradients`] map keyed by parameter name.

use std::collections::{BTreeMap, HashMap};

use super::ops::{self, Activation, LayerNormCache};
use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Parameter gradients produced by one backward sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug)]
enum Op {
    Param(String),
    Constant,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Abs(NodeId),
    Scale(NodeId, f64),
    ScaleRows(NodeId, Vec<f64>),
    Act(NodeId, Activation),
    Gather(NodeId, Vec<usize>),
    SumRows(NodeId),
    MeanRows(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm(NodeId, NodeId, NodeId, LayerNormCache),
    L2NormalizeRows(NodeId, Vec<f64>),
    SoftmaxXent(NodeId, Vec<usize>, Tensor),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::Act(..) => "activation",
            Op::Gather(..) => "gather",
            Op::SumRows(_) => "sum_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Transpose(_) => "transpose",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm(..) => "layer_norm",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::SoftmaxXent(..) => "softmax_xent",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A single-use computation tape over a borrowed parameter store.
pub struct Graph<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
    first_non_finite: Option<&'static str>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new(), first_non_finite: None }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(name)) => &self.store.get(name).expect("registered parameter").value,
            _ => unreachable!("only parameter leaves borrow their value"),
        }
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    /// Names of every parameter referenced by this tape.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.keys().cloned().collect();
        names.sort();
        names
    }

    /// Fails if any recorded op produced a NaN or infinity.
    /// Side of zero of every relu and abs input. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            let input = match &node.op {
                Op::Act(a, Activation::Relu) | Op::Abs(a) => *a,
                _ => continue,
            };
            sig.extend(self.value(input).data().iter().map(|&v| v > 0.0));
        }
        sig
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(op.name());
        }
        let needs_grad = self.inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value: Some(value), needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Param(_) | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Abs(a)
            | Op::Scale(a, _)
            | Op::ScaleRows(a, _)
            | Op::Act(a, _)
            | Op::Gather(a, _)
            | Op::SumRows(a)
            | Op::MeanRows(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::L2NormalizeRows(a, _)
            | Op::SoftmaxXent(a, _, _) => vec![*a],
            Op::LayerNorm(x, g, b, _) => vec![*x, *g, *b],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
        }
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        self.store.get(name)?;
        self.nodes.push(Node { op: Op::Param(name.to_string()), value: None, needs_grad: true });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add_bias(self.value(x), self.value(b))?;
        Ok(self.push(Op::AddBias(x, b), v))
    }

    /// `x·W + b` with parameters looked up by name.
    pub fn affine(&mut self, x: NodeId, weight: &str, bias: &str) -> Result<NodeId> {
        let w = self.param(weight)?;
        let b = self.param(bias)?;
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, ())> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, ()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.abs()).collect()).expect("same shape");
        self.push(Op::Abs(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale(c);
        self.push(Op::Scale(a, c), v)
    }

    /// Multiplies row `r` by `factors[r]`.
    pub fn scale_rows(&mut self, a: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        if v.rows() != factors.len() {
            return Err(Error::ShapeMismatch(format!("{} row factors for {} rows", factors.len(), v.rows())));
        }
        for (r, &f) in factors.iter().enumerate() {
            for x in v.row_slice_mut(r) {
                *x *= f;
            }
        }
        Ok(self.push(Op::ScaleRows(a, factors), v))
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let v = ops::activation(self.value(a), kind);
        self.push(Op::Act(a, kind), v)
    }

    /// Rows `ids` of a 2-D table (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch("gather needs a 2-D table".into()));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange { index: id, size: rows });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let v = Tensor::matrix(ids.len(), cols, data)?;
        Ok(self.push(Op::Gather(table, ids.to_vec()), v))
    }

    /// Column-wise sum, producing a `1 x n` row.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = ops::column_sums(t, &[1, t.cols()]);
        self.push(Op::SumRows(a), v)
    }

    /// Column-wise mean, producing a `1 x n` row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut v = ops::column_sums(t, &[1, t.cols()]);
        v.scale(1.0 / t.rows() as f64);
        self.push(Op::MeanRows(a), v)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(Error::ShapeMismatch(format!("row slice {start}..{end} of {}", t.rows())));
        }
        let c = t.cols();
        let v = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::ShapeMismatch(format!("column slice {start}..{end} of {}", t.cols())));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let v = Tensor::matrix(t.rows(), end - start, data)?;
        Ok(self.push(Op::SliceCols(a, start), v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::ShapeMismatch("concat_rows column mismatch".into()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::ShapeMismatch("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = ops::softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (v, cache) = ops::layer_norm_rows(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(Op::LayerNorm(x, gain, bias, cache), v))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, norms) = ops::l2_normalize_rows(self.value(a))?;
        Ok(self.push(Op::L2NormalizeRows(a, norms), v))
    }

    /// Mean softmax cross-entropy; a scalar node.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (loss, probs) = ops::softmax_xent(self.value(logits), targets)?;
        Ok(self.push(Op::SoftmaxXent(logits, targets.to_vec(), probs), Tensor::scalar(loss)))
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn xent_probs(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes[id.0].op {
            Op::SoftmaxXent(_, _, p) => Some(p),
            _ => None,
        }
    }

    /// Backpropagates from a single-element node and returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.ensure_finite()?;
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = node.value.as_ref();
            match &node.op {
                Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = ops::matmul_nt(&g, self.value(*b))?;
                        self.add_grad(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = ops::matmul_tn(self.value(*a), &g)?;
                        self.add_grad(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let db = ops::column_sums(&g, self.value(*b).shape());
                        self.add_grad(&mut grads, *b, db);
                    }
                    self.add_grad(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    self.add_grad(&mut grads, *b, g.clone());
                    self.add_grad(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.scale(-1.0);
                    self.add_grad(&mut grads, *b, neg);
                    self.add_grad(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = zip_with(&g, tb, |x, y| x * y);
                        self.add_grad(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = zip_with(&g, ta, |x, y| x * y);
                        self.add_grad(&mut grads, *b, d);
                    }
                }
                Op::Abs(a) => {
                    let d = zip_with(&g, self.value(*a), |x, y| {
                        if y > 0.0 {
                            x
                        } else if y < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    self.add_grad(&mut grads, *a, d);
                }
                Op::Scale(a, c) => {
                    let mut d = g;
                    d.scale(*c);
                    self.add_grad(&mut grads, *a, d);
                }
                Op::ScaleRows(a, factors) => {
                    let mut d = g;
                    for (r, &f) in factors.iter().enumerate() {
                        for x in d.row_slice_mut(r) {
                            *x *= f;
                        }
                    }
                    self.add_grad(&mut grads, *a, d);
                }
                Op::Act(a, kind) => {
                    let d = ops::activation_backward(self.value(*a), out.expect("owned"), &g, *kind);
                    self.add_grad(&mut grads, *a, d);
                }
                Op::Gather(table, ids) => {
                    let shape = self.value(*table).shape().to_vec();
                    let acc = grads[table.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in acc.row_slice_mut(id).iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    let t = self.value(*a);
                    let c = if matches!(node.op, Op::MeanRows(_)) { 1.0 / t.rows() as f64 } else { 1.0 };
                    let mut d = Tensor::zeros(t.shape());
                    for r in 0..t.rows() {
                        for (o, v) in d.row_slice_mut(r).iter_mut().zip(g.data()) {
                            *o = v * c;
                        }
                    }
                    self.add_grad(&mut grads, *a, d);
                }
                Op::SliceRows(a, start) => {
                    let shape = self.value(*a).shape().to_vec();
                    let c = g.cols();
                    let acc = grads[a.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    for (o, v) in acc.data_mut()[start * c..].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.value(*a).shape().to_vec();
                    let w = g.cols();
                    let acc = grads[a.0].get_or_insert_with(|| Tensor::zeros(&shape));
                    for r in 0..g.rows() {
                        for (o, v) in acc.row_slice_mut(r)[*start..start + w].iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let n = t.len();
                        if self.needs(p) {
                            let d = Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                            self.add_grad(&mut grads, p, d);
                        }
                        offset += n;
                        debug_assert_eq!(n % c, 0);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let w = t.cols();
                        if self.needs(p) {
                            let mut data = Vec::with_capacity(t.len());
                            for r in 0..g.rows() {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            self.add_grad(&mut grads, p, Tensor::new(t.shape().to_vec(), data)?);
                        }
                        offset += w;
                    }
                }
                Op::Transpose(a) => {
                    let d = ops::transpose(&g)?;
                    self.add_grad(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let d = ops::softmax_rows_backward(out.expect("owned"), &g);
                    self.add_grad(&mut grads, *a, d);
                }
                Op::LayerNorm(x, gain, bias, cache) => {
                    let (dx, dg, db) = ops::layer_norm_rows_backward(cache, self.value(*gain), &g);
                    let dg = dg.reshape(self.value(*gain).shape().to_vec())?;
                    let db = db.reshape(self.value(*bias).shape().to_vec())?;
                    self.add_grad(&mut grads, *gain, dg);
                    self.add_grad(&mut grads, *bias, db);
                    self.add_grad(&mut grads, *x, dx);
                }
                Op::L2NormalizeRows(a, norms) => {
                    let d = ops::l2_normalize_rows_backward(out.expect("owned"), norms, &g);
                    self.add_grad(&mut grads, *a, d);
                }
                Op::SoftmaxXent(logits, targets, probs) => {
                    let mut d = ops::softmax_xent_backward(probs, targets);
                    d.scale(g.data()[0]);
                    self.add_grad(&mut grads, *logits, d);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            if let Some(g) = grads.get_mut(id.0).and_then(Option::take) {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of `{name}`")));
                }
                out.insert(name.clone(), g);
            }
        }
        Ok(Gradients(out))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                // gradients flowing into a rank-1 parameter may arrive as 1 x n rows
                let shape = self.value(id).shape().to_vec();
                *slot = Some(if g.shape() == shape.as_slice() {
                    g
                } else {
                    g.reshape(shape).expect("gradient size matches node")
                });
            }
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        for (n, t) in entries {
            s.insert(n, t.clone(), true).unwrap();
        }
        s
    }

    #[test]
    fn param_nodes_are_shared() {
        let s = store_with(&[("w", Tensor::identity(2))]);
        let mut g = Graph::new(&s);
        assert_eq!(g.param("w").unwrap(), g.param("w").unwrap());
        assert!(g.param("missing").is_err());
    }

    #[test]
    fn affine_backward_through_tape() {
        let s = store_with(&[
            ("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
            ("b", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()),
        ]);
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![1.0, 1.0]));
        let y = g.affine(x, "w", "b").unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 7.0]);
        let total = g.sum_rows(y);
        let ones = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let loss = g.matmul(total, ones).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(grads.get("b").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn gather_scatters_repeated_rows() {
        let s = store_with(&[("e", Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())]);
        let mut g = Graph::new(&s);
        let e = g.param("e").unwrap();
        let rows = g.gather(e, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let summed = g.sum_rows(rows);
        let w = g.constant(Tensor::matrix(2, 1, vec![1.0, 10.0]).unwrap());
        let loss = g.matmul(summed, w).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("e").unwrap().data(), &[1.0, 10.0, 0.0, 0.0, 2.0, 20.0]);
        assert!(g.gather(e, &[3]).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let s = store_with(&[("w", Tensor::row(vec![f64::MAX, f64::MAX]))]);
        let mut g = Graph::new(&s);
        let w = g.param("w").unwrap();
        let big = g.add(w, w).unwrap();
        let _ = g.sum_rows(big);
        assert!(matches!(g.ensure_finite(), Err(Error::NonFinite(op)) if op == "add"));
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let s = store_with(&[("w", Tensor::row(vec![1.0, 2.0]))]);
        let mut g = Graph::new(&s);
        let c = g.constant(Tensor::row(vec![3.0, 4.0]));
        let w = g.param("w").unwrap();
        let prod = g.mul(c, w).unwrap();
        let sum = g.sum_rows(prod);
        let col = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let loss = g.matmul(sum, col).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads.get("w").unwrap().data(), &[3.0, 4.0]);
    }
}
