//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in
//! construction order, so the node list is already a topological order and
//! the backward pass is a single reverse sweep. Trainable weights live in a
//! [`ParamStore`] and enter a graph through [`Graph::param`]; gradients are
//! accumulated back into the store after [`Graph::backward`].

use std::collections::HashMap;

use super::matrix::Matrix;
use crate::error::ShapeError;

/// Index of a trainable parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Owns every trainable weight of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// rhs is broadcast along rows and/or columns.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    /// Cached softmax of the logits and the target index.
    CrossEntropy(Var, Matrix, usize),
    /// Cached probabilities, targets, and per-entry weights (already divided by the normalizer).
    BceWithLogits(Var, Matrix, Vec<f64>, Vec<f64>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// A single forward computation, recorded for differentiation.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    param_names: HashMap<usize, String>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            param_names: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn label(&self, v: Var) -> String {
        match self.param_names.get(&v.0) {
            Some(name) => format!("`{name}`"),
            None => format!("node #{}", v.0),
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> ShapeError {
        ShapeError {
            op,
            lhs: self.label(a),
            lhs_shape: self.shape(a),
            rhs: self.label(b),
            rhs_shape: self.shape(b),
        }
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, true);
        self.param_nodes.insert(id, v);
        self.param_names.insert(v.0, p.name.clone());
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(self.shape_err("matmul", a, b));
        }
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), ShapeError> {
        if self.shape(a) != self.shape(b) {
            Err(self.shape_err(op, a, b))
        } else {
            Ok(())
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `a + b` where `b` is `a`-shaped, a row `1×n`, a column `m×1`, or `1×1`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (m, n) = self.shape(a);
        let (br, bc) = self.shape(b);
        if !((br == m || br == 1) && (bc == n || bc == 1)) {
            return Err(self.shape_err("add_broadcast", a, b));
        }
        let bv = self.value(b);
        let mut value = self.value(a).clone();
        for r in 0..m {
            for c in 0..n {
                let x = bv.get(if br == 1 { 0 } else { r }, if bc == 1 { 0 } else { c });
                value.set(r, c, value.get(r, c) + x);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::AddBroadcast(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            softmax_into(src.row(r), value.row_mut(r));
        }
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        let (m, n) = self.shape(a);
        if start > end || end > m {
            return Err(ShapeError {
                op: "slice_rows",
                lhs: self.label(a),
                lhs_shape: (m, n),
                rhs: format!("rows {start}..{end}"),
                rhs_shape: (end.saturating_sub(start), n),
            });
        }
        let value = self.value(a).slice_rows(start, end);
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        let (m, n) = self.shape(a);
        if start > end || end > n {
            return Err(ShapeError {
                op: "slice_cols",
                lhs: self.label(a),
                lhs_shape: (m, n),
                rhs: format!("cols {start}..{end}"),
                rhs_shape: (m, end.saturating_sub(start)),
            });
        }
        let value = self.value(a).slice_cols(start, end);
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        for &p in &parts[1..] {
            if self.shape(p).0 != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        for &p in &parts[1..] {
            if self.shape(p).1 != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Matrix::scalar(src.sum() / src.len().max(1) as f64);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Softmax cross-entropy of a flat logit vector (`1×C` or `C×1`) against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, ShapeError> {
        let (m, n) = self.shape(logits);
        if m != 1 && n != 1 || target >= m * n {
            return Err(ShapeError {
                op: "cross_entropy",
                lhs: self.label(logits),
                lhs_shape: (m, n),
                rhs: format!("target {target}"),
                rhs_shape: (1, 1),
            });
        }
        let x = self.value(logits).data();
        let lse = log_sum_exp(x);
        let loss = lse - x[target];
        let mut probs = Matrix::zeros(m, n);
        softmax_into(x, probs.data_mut());
        let ng = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy(logits, probs, target),
            ng,
        ))
    }

    /// Weighted mean of numerically stable binary cross-entropy on logits.
    ///
    /// `weights` of zero mask entries out; the result is divided by the total
    /// weight (0 when every entry is masked).
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Var, ShapeError> {
        let shape = self.shape(logits);
        if targets.len() != shape.0 * shape.1 || weights.len() != targets.len() {
            return Err(ShapeError {
                op: "bce_with_logits",
                lhs: self.label(logits),
                lhs_shape: shape,
                rhs: "targets".into(),
                rhs_shape: (targets.len(), 1),
            });
        }
        let total: f64 = weights.iter().sum();
        let norm = if total > 0.0 { 1.0 / total } else { 0.0 };
        let x = self.value(logits).data();
        let mut loss = 0.0;
        for ((&z, &t), &w) in x.iter().zip(targets).zip(weights) {
            if w != 0.0 {
                // max(z,0) - z t + ln(1 + e^{-|z|})
                loss += w * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p());
            }
        }
        let probs = self.value(logits).map(sigmoid);
        let scaled: Vec<f64> = weights.iter().map(|w| w * norm).collect();
        let ng = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss * norm),
            Op::BceWithLogits(logits, probs, targets.to_vec(), scaled),
            ng,
        ))
    }

    /// Reverse sweep from a scalar node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    acc(*a, g.matmul_t(bv));
                }
                if self.needs(*b) {
                    acc(*b, av.t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |x, y| x * y));
                acc(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, g.clone());
                let (br, bc) = self.shape(*b);
                let mut gb = Matrix::zeros(br, bc);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let rr = if br == 1 { 0 } else { r };
                        let cc = if bc == 1 { 0 } else { c };
                        gb.set(rr, cc, gb.get(rr, cc) + g.get(r, c));
                    }
                }
                acc(*b, gb);
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => {
                acc(*a, g.zip_map(&node.value, |gx, y| gx * (1.0 - y * y)));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |gx, x| if x > 0.0 { gx } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |gx, y| gx * y * (1.0 - y)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yy), &gg) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SliceRows(a, start) => {
                let (m, n) = self.shape(*a);
                let mut ga = Matrix::zeros(m, n);
                ga.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.shape(*a);
                let mut ga = Matrix::zeros(m, n);
                for r in 0..m {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice_cols(offset, offset + w));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    acc(p, g.slice_rows(offset, offset + h));
                    offset += h;
                }
            }
            Op::Sum(a) => {
                let (m, n) = self.shape(*a);
                acc(*a, Matrix::filled(m, n, g.item()));
            }
            Op::Mean(a) => {
                let (m, n) = self.shape(*a);
                acc(*a, Matrix::filled(m, n, g.item() / (m * n).max(1) as f64));
            }
            Op::CrossEntropy(a, probs, target) => {
                let mut ga = probs.clone();
                ga.data_mut()[*target] -= 1.0;
                ga.scale_assign(g.item());
                acc(*a, ga);
            }
            Op::BceWithLogits(a, probs, targets, weights) => {
                let gi = g.item();
                let mut ga = probs.clone();
                for ((o, &t), &w) in ga.data_mut().iter_mut().zip(targets).zip(weights) {
                    *o = gi * w * (*o - t);
                }
                acc(*a, ga);
            }
        }
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds `scale * dLoss/dParam` into every parameter's `grad` buffer.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore, scale: f64) {
        for (&id, &var) in &graph.param_nodes {
            if let Some(g) = self.get(var) {
                let target = &mut store.get_mut(id).grad;
                for (t, x) in target.data_mut().iter_mut().zip(g.data()) {
                    *t += scale * x;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    softmax_into(xs, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_cross_entropy_gradient_is_softmax_minus_onehot() {
        let c = 5;
        let mut store = ParamStore::new();
        let id = store.add("logits", Matrix::zeros(1, c));
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let loss = g.cross_entropy(x, 2).unwrap();
        assert!((g.value(loss).item() - (c as f64).ln()).abs() < 1e-12);
        let grads = g.backward(loss);
        let gx = grads.get(x).unwrap();
        for k in 0..c {
            let expected = if k == 2 { 1.0 / c as f64 - 1.0 } else { 1.0 / c as f64 };
            assert!((gx.data()[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::scalar(0.0));
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn shape_mismatch_names_both_operands() {
        let mut store = ParamStore::new();
        let a = store.add("proj.weight", Matrix::zeros(2, 3));
        let b = store.add("other.weight", Matrix::zeros(4, 2));
        let mut g = Graph::new();
        let (va, vb) = (g.param(&store, a), g.param(&store, b));
        let err = g.matmul(va, vb).unwrap_err().to_string();
        assert!(err.contains("proj.weight") && err.contains("other.weight"), "{err}");
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::row_vector(&[1.0, 2.0]));
        let s = g.sum(c);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[vec![1000.0, 0.0, -5.0], vec![0.1, 0.2, 0.3]]));
        let y = g.softmax_rows(x);
        for r in 0..2 {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_bce_ignores_masked_entries() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::row_vector(&[0.0, 50.0]));
        let loss = g.bce_with_logits(x, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
