//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Every operation appends a node whose inputs have strictly smaller ids, so
//! iterating nodes from last to first is a reverse topological order.

use std::collections::{BTreeMap, HashMap};

use super::{sigmoid, Gradients, Matrix, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Lower bound applied to probabilities inside [`Tape::bce_prob`].
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    Transpose(Var),
    GradReverse(Var, f64),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    PairwiseSqDist(Var, Var),
    BceWithLogits(Var, Vec<f64>),
    BceProb(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    param: Option<String>,
}

/// Records a forward computation for one backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<String, Var>,
}

/// Per-node gradients from [`Tape::backward_nodes`].
#[derive(Debug, Clone)]
pub struct NodeGrads {
    grads: Vec<Option<Matrix>>,
}

impl NodeGrads {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize), op: &str) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::dim(format!(
            "{op}: shapes {}x{} and {}x{} are not broadcast-compatible",
            a.0, a.1, b.0, b.1
        ))),
    }
}

#[inline]
fn bcast_get(m: &Matrix, r: usize, c: usize) -> f64 {
    let rr = if m.rows() == 1 { 0 } else { r };
    let cc = if m.cols() == 1 { 0 } else { c };
    m.get(rr, cc)
}

fn broadcast_zip(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == shape && b.shape() == shape {
        return a.zip_map(b, f);
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            out.set(r, c, f(bcast_get(a, r, c), bcast_get(b, r, c)));
        }
    }
    out
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let rr = if shape.0 == 1 { 0 } else { r };
            let cc = if shape.1 == 1 { 0 } else { c };
            let v = out.get(rr, cc) + g.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

fn check_labels(labels: &[f64], n: usize, op: &str) -> Result<()> {
    if labels.len() != n {
        return Err(Error::dim(format!("{op}: {} labels for {n} predictions", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::Data(format!("{op}: label {bad} outside [0, 1]")));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (readable from [`NodeGrads`]).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node so
    /// that multiple uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_leaves.get(name) {
            return Ok(v);
        }
        let p = store.require(name)?;
        let v = self.push(p.as_matrix(), Op::Leaf, p.requires_grad);
        self.nodes[v.0].param = Some(name.to_string());
        self.param_leaves.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.shape(), vb.shape(), name)?;
        let value = broadcast_zip(va, vb, shape, f);
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.ng(&[a]);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Contract("mean of an empty array".into()));
        }
        let value = Matrix::scalar(v.sum() / v.len() as f64);
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Mean(a), ng))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).as_slice().iter().map(|x| x * x).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::SumSq(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Identity on the forward pass; multiplies the incoming gradient by
    /// `-lambda` on the way back.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "gradient reversal strength must be a positive finite number, got {lambda}"
            )));
        }
        let value = self.value(a).clone();
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::GradReverse(a, lambda), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::dim(format!(
                "gather_rows: index {bad} out of range for {} rows",
                v.rows()
            )));
        }
        let value = v.select_rows(idx);
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// `out[idx[i]] += a[i]` into an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let v = self.value(a);
        if idx.len() != v.rows() {
            return Err(Error::dim(format!(
                "scatter_add_rows: {} indices for {} rows",
                idx.len(),
                v.rows()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::dim(format!(
                "scatter_add_rows: index {bad} out of range for {n_out} output rows"
            )));
        }
        let mut out = Matrix::zeros(n_out, v.cols());
        for (r, &dst) in idx.iter().enumerate() {
            for (o, x) in out.row_slice_mut(dst).iter_mut().zip(v.row_slice(r)) {
                *o += x;
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::ScatterAddRows(a, idx.to_vec()), ng))
    }

    /// Softmax over the rows that share a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize], n_segments: usize) -> Result<Var> {
        let v = self.value(a);
        if segments.len() != v.rows() {
            return Err(Error::dim(format!(
                "segment_softmax: {} segment ids for {} rows",
                segments.len(),
                v.rows()
            )));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::dim(format!(
                "segment_softmax: segment {bad} out of range for {n_segments} segments"
            )));
        }
        let cols = v.cols();
        let mut max = Matrix::filled(n_segments, cols, f64::NEG_INFINITY);
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                if v.get(r, c) > max.get(s, c) {
                    max.set(s, c, v.get(r, c));
                }
            }
        }
        let mut out = Matrix::zeros(v.rows(), cols);
        let mut denom = Matrix::zeros(n_segments, cols);
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let e = (v.get(r, c) - max.get(s, c)).exp();
                out.set(r, c, e);
                denom.set(s, c, denom.get(s, c) + e);
            }
        }
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / denom.get(s, c));
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::SegmentSoftmax(a, segments.to_vec(), n_segments), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim(format!("concat_cols: {} rows vs {rows}", v.rows())));
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row_slice(r);
                out.row_slice_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim(format!("concat_rows: {} columns vs {cols}", v.cols())));
            }
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        let out = Matrix::new(rows, cols, data)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// `D[i][j] = ‖a_i − b_j‖²` for row sets `a` (n×d) and `b` (m×d).
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::dim(format!(
                "pairwise_sq_dist: {}x{} and {}x{} differ in width",
                va.rows(),
                va.cols(),
                vb.rows(),
                vb.cols()
            )));
        }
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        for i in 0..va.rows() {
            let ai = va.row_slice(i);
            for j in 0..vb.rows() {
                let d: f64 = ai.iter().zip(vb.row_slice(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                out.set(i, j, d);
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::PairwiseSqDist(a, b), ng))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// evaluated in a numerically stable form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        check_labels(labels, v.len(), "bce_with_logits")?;
        let loss: f64 = v
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let ng = self.ng(&[logits]);
        Ok(self.push(Matrix::scalar(loss), Op::BceWithLogits(logits, labels.to_vec()), ng))
    }

    /// Summed binary cross-entropy of probabilities clamped to
    /// `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn bce_prob(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let v = self.value(probs);
        check_labels(labels, v.len(), "bce_prob")?;
        let loss: f64 = v
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let ng = self.ng(&[probs]);
        Ok(self.push(Matrix::scalar(loss), Op::BceProb(probs, labels.to_vec()), ng))
    }

    /// Gradients of a scalar `loss` with respect to every tracked node.
    pub fn backward_nodes(&self, loss: Var) -> Result<NodeGrads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got a {}x{} array",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(NodeGrads { grads })
    }

    /// Gradients with respect to every trainable parameter in `store`.
    /// Parameters that did not contribute to `loss` receive zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let node_grads = self.backward_nodes(loss)?;
        let mut out = BTreeMap::new();
        for p in store.iter().filter(|p| p.requires_grad) {
            let g = self
                .param_leaves
                .get(&p.name)
                .and_then(|&v| node_grads.wrt(v))
                .map(|m| m.as_slice().to_vec())
                .unwrap_or_else(|| vec![0.0; p.len()]);
            out.insert(p.name.clone(), g);
        }
        Ok(Gradients(out))
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    let ga = g.matmul_t(val(*b)).expect("shapes fixed on forward");
                    self.accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    let gb = val(*a).t_matmul(g).expect("shapes fixed on forward");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(&g.map(|x| -x), val(*b).shape()));
            }
            Op::Mul(a, b) => {
                let shape = g.shape();
                if needs(*a) {
                    let full = broadcast_zip(g, val(*b), shape, |x, y| x * y);
                    self.accumulate(grads, *a, reduce_to(&full, val(*a).shape()));
                }
                if needs(*b) {
                    let full = broadcast_zip(g, val(*a), shape, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&full, val(*b).shape()));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::Relu(a) => {
                let ga = g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let ga = g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { slope * gi });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y));
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&node.value, |gi, y| gi * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c) as f64;
                self.accumulate(grads, *a, Matrix::filled(r, c, g.as_slice()[0] / n));
            }
            Op::SumSq(a) => {
                let s = g.as_slice()[0];
                self.accumulate(grads, *a, val(*a).map(|x| 2.0 * x * s));
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::GradReverse(a, lambda) => self.accumulate(grads, *a, g.map(|x| -lambda * x)),
            Op::GatherRows(a, idx) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let ga = g.select_rows(idx);
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, segments, n_segments) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dot = Matrix::zeros(*n_segments, cols);
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..cols {
                        dot.set(s, c, dot.get(s, c) + y.get(r, c) * g.get(r, c));
                    }
                }
                let mut ga = Matrix::zeros(y.rows(), cols);
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..cols {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot.get(s, c)));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (h, w) = val(p).shape();
                    if needs(p) {
                        let slice = g.as_slice()[offset * w..(offset + h) * w].to_vec();
                        self.accumulate(grads, p, Matrix::new(h, w, slice).expect("shape"));
                    }
                    offset += h;
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    // 2 (diag(rowsum g) A − g B)
                    let gb_prod = g.matmul(vb).expect("shape");
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for i in 0..va.rows() {
                        let rs: f64 = g.row_slice(i).iter().sum();
                        for c in 0..va.cols() {
                            ga.set(i, c, 2.0 * (rs * va.get(i, c) - gb_prod.get(i, c)));
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    // 2 (diag(colsum g) B − gᵀ A)
                    let gta = g.t_matmul(va).expect("shape");
                    let mut gbm = Matrix::zeros(vb.rows(), vb.cols());
                    for j in 0..vb.rows() {
                        let cs: f64 = (0..g.rows()).map(|i| g.get(i, j)).sum();
                        for c in 0..vb.cols() {
                            gbm.set(j, c, 2.0 * (cs * vb.get(j, c) - gta.get(j, c)));
                        }
                    }
                    self.accumulate(grads, *b, gbm);
                }
            }
            Op::BceWithLogits(a, labels) => {
                let s = g.as_slice()[0];
                let x = val(*a);
                let data = x
                    .as_slice()
                    .iter()
                    .zip(labels)
                    .map(|(&xi, &y)| s * (sigmoid(xi) - y))
                    .collect();
                let ga = Matrix::new(x.rows(), x.cols(), data).expect("shape");
                self.accumulate(grads, *a, ga);
            }
            Op::BceProb(a, labels) => {
                let s = g.as_slice()[0];
                let p = val(*a);
                let data = p
                    .as_slice()
                    .iter()
                    .zip(labels)
                    .map(|(&pi, &y)| {
                        if pi <= PROB_CLAMP || pi >= 1.0 - PROB_CLAMP {
                            0.0
                        } else {
                            s * (-y / pi + (1.0 - y) / (1.0 - pi))
                        }
                    })
                    .collect();
                let ga = Matrix::new(p.rows(), p.cols(), data).expect("shape");
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ParamTensor;

    fn store_with(name: &str, values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(ParamTensor::new(name, vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn elementwise_definitions() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::row(&[-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).as_slice(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Matrix::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.scalar(s), 0.5);
        let v = t.constant(Matrix::row(&[3.0, 4.0]));
        let sq = t.sum_sq(v);
        assert_eq!(t.scalar(sq), 25.0);
    }

    #[test]
    fn sum_sq_gradient_is_twice_value() {
        let store = store_with("w", &[3.0]);
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let loss = t.sum_sq(w);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get("w").unwrap(), &[6.0]);
    }

    #[test]
    fn sigmoid_of_zero_weight_gradient() {
        // d/dw sigmoid(w·x) at w = 0 is 0.25·x
        let store = store_with("w", &[0.0, 0.0]);
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let x = t.constant(Matrix::column(&[1.5, -2.0]));
        let wx = t.matmul(w, x).unwrap();
        let loss = t.sigmoid(wx);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get("w").unwrap(), &[0.375, -0.5]);
    }

    #[test]
    fn disconnected_parameter_gets_zero() {
        let mut store = store_with("w", &[1.0, 2.0]);
        store
            .insert(ParamTensor::new("unused", vec![3], vec![1.0; 3]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let loss = t.sum_sq(w);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get("unused").unwrap(), &[0.0; 3]);
    }

    #[test]
    fn frozen_parameters_are_not_reported() {
        let mut store = store_with("w", &[1.0]);
        store.get_mut("w").unwrap().requires_grad = false;
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let loss = t.sum_sq(w);
        assert!(t.backward(loss, &store).unwrap().0.is_empty());
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.input(Matrix::row(&[1.0, 2.0]));
        assert!(matches!(t.backward_nodes(x), Err(Error::Contract(_))));
    }

    #[test]
    fn grad_reverse_forward_and_backward() {
        let mut t = Tape::new();
        let x = t.input(Matrix::row(&[1.0, 2.0, 3.0]));
        let y = t.grad_reverse(x, 1.0).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let mut t = Tape::new();
        let x = t.input(Matrix::row(&[0.3, -0.7]));
        let r = t.grad_reverse(x, 0.5).unwrap();
        let w = t.constant(Matrix::column(&[2.0, -4.0]));
        let loss = t.matmul(r, w).unwrap();
        let g = t.backward_nodes(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().as_slice(), &[-1.0, 2.0]);

        let mut t = Tape::new();
        let x = t.input(Matrix::row(&[0.3, -0.7]));
        let r = t.grad_reverse(x, 1.0).unwrap();
        let s = t.sum(r);
        let g = t.backward_nodes(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn grad_reverse_rejects_nonpositive_lambda() {
        let mut t = Tape::new();
        let x = t.input(Matrix::row(&[1.0]));
        assert!(matches!(t.grad_reverse(x, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(t.grad_reverse(x, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn broadcast_mismatch_is_dimension_error() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(3, 2));
        assert!(matches!(t.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        // loss = sum(w ⊙ w) + 3·sum(w) -> 2w + 3
        let store = store_with("w", &[1.0, -2.0]);
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let w2 = t.param(&store, "w").unwrap();
        assert_eq!(w, w2);
        let sq = t.mul(w, w2).unwrap();
        let a = t.sum(sq);
        let s = t.sum(w);
        let b = t.scale(s, 3.0);
        let loss = t.add(a, b).unwrap();
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get("w").unwrap(), &[5.0, -1.0]);
    }

    #[test]
    fn segment_softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(&[1.0, 2.0, 3.0, -1.0, 0.5]));
        let y = t.segment_softmax(x, &[0, 0, 1, 1, 1], 2).unwrap();
        let v = t.value(y).as_slice();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + v[3] + v[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bce_with_logits_values() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::row(&[0.0, 0.0]));
        let l = t.bce_with_logits(x, &[0.0, 1.0]).unwrap();
        assert!((t.scalar(l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(t.bce_with_logits(x, &[0.0, 2.0]), Err(Error::Data(_))));
    }
}
