//! Define-by-run reverse-mode differentiation over `ndarray` matrices.
//!
//! Every differentiable computation in the library (recurrent rollouts,
//! attention, losses) is expressed as a graph on a [`Tape`]. Values are
//! computed eagerly as nodes are pushed; [`Tape::backward`] walks the graph
//! once in reverse and accumulates gradients into every node that
//! transitively depends on a `var` leaf. Leaves created with [`Tape::constant`]
//! never receive gradients and whole constant subgraphs are skipped, which is
//! what makes "train D with G frozen" and "optimize the noise with everything
//! frozen" cheap.
//!
//! All values are `Array2<f64>`; vectors are 1×n rows and scalars are 1×1.

use ndarray::{concatenate, s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Numerically stable row softmax, shared by the tape op and the plain
/// attention path so both produce bit-identical values.
pub fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    Neg(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    FlipRows(NodeId),
    /// Extract row `i` as a 1×n matrix.
    Row(NodeId, usize),
    /// Sum of all entries, as 1×1.
    SumAll(NodeId),
    /// Sum of `weights ⊙ x`, as 1×1. Weights are fixed.
    WeightedSum(NodeId, Array2<f64>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if it received one.
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient, or zeros of the given shape when the node received none.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Array2<f64> {
        match self.grads[id.0].as_ref() {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: &Array2<f64>) {
    match slot {
        Some(g) => *g += delta,
        None => *slot = Some(delta.clone()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf; subgraphs built only from constants are
    /// skipped entirely during backward.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "add: shape mismatch"
        );
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "sub: shape mismatch"
        );
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "mul: shape mismatch"
        );
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul: inner dimension mismatch ({}×{} · {}×{})",
            self.value(a).nrows(),
            self.value(a).ncols(),
            self.value(b).nrows(),
            self.value(b).ncols()
        );
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(Op::Transpose(a), value, ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), value, ng)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = -self.value(a);
        let ng = self.needs(a);
        self.push(Op::Neg(a), value, ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.needs(a);
        self.push(Op::Exp(a), value, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::abs);
        let ng = self.needs(a);
        self.push(Op::Abs(a), value, ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        softmax_rows_inplace(&mut value);
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row count mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column count mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.to_vec()), value, ng)
    }

    /// Reverse row order (time flip).
    pub fn flip_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).slice(s![..;-1, ..]).to_owned();
        let ng = self.needs(a);
        self.push(Op::FlipRows(a), value, ng)
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let value = self
            .value(a)
            .row(i)
            .to_owned()
            .insert_axis(Axis(0));
        let ng = self.needs(a);
        self.push(Op::Row(a, i), value, ng)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::SumAll(a), value, ng)
    }

    /// `sum(weights ⊙ a)` as a 1×1 node; the weight matrix is not differentiated.
    pub fn weighted_sum(&mut self, a: NodeId, weights: Array2<f64>) -> NodeId {
        assert_eq!(
            self.value(a).dim(),
            weights.dim(),
            "weighted_sum: shape mismatch"
        );
        let value = Array2::from_elem((1, 1), (self.value(a) * &weights).sum());
        let ng = self.needs(a);
        self.push(Op::WeightedSum(a, weights), value, ng)
    }

    /// Reverse pass seeded with dL/dL = 1 at the 1×1 `loss` node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward: loss must be 1×1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if self.needs(*b) {
                        let neg = -&g;
                        accumulate(&mut grads[b.0], &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let d = &g * self.value(*b);
                        accumulate(&mut grads[a.0], &d);
                    }
                    if self.needs(*b) {
                        let d = &g * self.value(*a);
                        accumulate(&mut grads[b.0], &d);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let d = g.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], &d);
                    }
                    if self.needs(*b) {
                        let d = self.value(*a).t().dot(&g);
                        accumulate(&mut grads[b.0], &d);
                    }
                }
                Op::Transpose(a) => {
                    let d = g.t().to_owned();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Scale(a, c) => {
                    let d = &g * *c;
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Neg(a) => {
                    let d = -&g;
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Exp(a) => {
                    let d = &g * &node.value;
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let d = &g * &mask;
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Sigmoid(a) => {
                    let d = &g * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Tanh(a) => {
                    let d = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Abs(a) => {
                    let sign = self.value(*a).mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    let d = &g * &sign;
                    accumulate(&mut grads[a.0], &d);
                }
                Op::SoftmaxRows(a) => {
                    // dL/ds = y ⊙ (g − rowsum(g ⊙ y))
                    let y = &node.value;
                    let mut d = Array2::zeros(y.dim());
                    for (i, (y_row, g_row)) in y.rows().into_iter().zip(g.rows()).enumerate() {
                        let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(a, b)| a * b).sum();
                        for (j, slot) in d.row_mut(i).iter_mut().enumerate() {
                            *slot = y_row[j] * (g_row[j] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            let d = g.slice(s![.., offset..offset + w]).to_owned();
                            accumulate(&mut grads[p.0], &d);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.needs(p) {
                            let d = g.slice(s![offset..offset + h, ..]).to_owned();
                            accumulate(&mut grads[p.0], &d);
                        }
                        offset += h;
                    }
                }
                Op::FlipRows(a) => {
                    let d = g.slice(s![..;-1, ..]).to_owned();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Row(a, i) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.dim());
                    d.row_mut(*i).assign(&g.row(0));
                    accumulate(&mut grads[a.0], &d);
                }
                Op::SumAll(a) => {
                    let d = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], &d);
                }
                Op::WeightedSum(a, w) => {
                    let d = w * g[[0, 0]];
                    accumulate(&mut grads[a.0], &d);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
