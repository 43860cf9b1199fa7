//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] records nodes in creation order; every node's forward value is
//! computed eagerly when it is recorded. Parents always precede children, so
//! the backward pass is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, Lu, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The recordable operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    /// `A·B`
    Gemm,
    Transpose,
    Add,
    Subtract,
    /// Matrix times a `1 × 1` node.
    Scale,
    Hadamard,
    /// `c × 1` column repeated `width` times.
    BroadcastColumn { width: usize },
    /// Row means, `c × m → c × 1`.
    ReduceMeanRows,
    /// `1 × 1` trace of a square matrix.
    Trace,
    /// `1 × 1` determinant of a square matrix (LU).
    LuDet,
    /// Elementwise `1/√a`; positive input required.
    RecipSqrt,
    Relu,
    /// Log-softmax down each column.
    LogSoftmaxColumns,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Gemm => "gemm",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Subtract => "subtract",
            Primitive::Scale => "scale-by-scalar",
            Primitive::Hadamard => "hadamard",
            Primitive::BroadcastColumn { .. } => "broadcast-column",
            Primitive::ReduceMeanRows => "reduce-mean-rows",
            Primitive::Trace => "trace",
            Primitive::LuDet => "lu_det",
            Primitive::RecipSqrt => "reciprocal-sqrt",
            Primitive::Relu => "elementwise-relu",
            Primitive::LogSoftmaxColumns => "log-softmax-columns",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Primitive::Gemm
            | Primitive::Add
            | Primitive::Subtract
            | Primitive::Scale
            | Primitive::Hadamard => 2,
            _ => 1,
        }
    }

    fn shape_error(self, left: (usize, usize), right: (usize, usize)) -> Error {
        Error::Shape { op: self.name(), left, right }
    }

    /// Forward evaluation. Shared by recording and replay.
    fn eval<T: Scalar>(self, inputs: &[&Mat<T>]) -> Result<Mat<T>> {
        let a = inputs[0];
        let out = match self {
            Primitive::Gemm => gemm(a, inputs[1]).map_err(|_| self.shape_error(a.shape(), inputs[1].shape()))?,
            Primitive::Transpose => a.transpose(),
            Primitive::Add => a.add(inputs[1])?,
            Primitive::Subtract => a.sub(inputs[1])?,
            Primitive::Scale => {
                let s = inputs[1]
                    .as_scalar()
                    .ok_or_else(|| self.shape_error(a.shape(), inputs[1].shape()))?;
                a.scale(s)
            }
            Primitive::Hadamard => a.hadamard(inputs[1])?,
            Primitive::BroadcastColumn { width } => {
                if width == 0 {
                    return Err(self.shape_error(a.shape(), (a.rows(), 0)));
                }
                a.broadcast_column(width)?
            }
            Primitive::ReduceMeanRows => a.row_means(),
            Primitive::Trace => {
                if !a.is_square() {
                    return Err(self.shape_error(a.shape(), a.shape()));
                }
                Mat::scalar(a.trace())
            }
            Primitive::LuDet => {
                if !a.is_square() {
                    return Err(self.shape_error(a.shape(), a.shape()));
                }
                Mat::scalar(Lu::new(a)?.det())
            }
            Primitive::RecipSqrt => a.map(|v| T::one() / v.sqrt()),
            Primitive::Relu => a.map(|v| if v > T::zero() { v } else { T::zero() }),
            Primitive::LogSoftmaxColumns => {
                let mut out = a.clone();
                for c in 0..a.cols() {
                    let col = a.col(c);
                    let max = col.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let lse = max + col.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                    for (r, v) in col.into_iter().enumerate() {
                        out.set(r, c, v - lse);
                    }
                }
                out
            }
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Variable,
    Constant,
    Op(Primitive),
}

#[derive(Debug, Clone)]
struct Node<T> {
    kind: NodeKind,
    parents: Vec<NodeId>,
    value: Mat<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every variable leaf, keyed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    map: BTreeMap<NodeId, Mat<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Mat<T>> {
        self.map.get(&id)
    }

    pub fn wrt(&self, id: NodeId) -> Result<&Mat<T>> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("node {} is not a variable leaf", id.0)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Mat<T>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Mat<T>) -> NodeId {
        self.push(NodeKind::Variable, Vec::new(), value, true)
    }

    /// Leaf treated as fixed data.
    pub fn constant(&mut self, value: Mat<T>) -> NodeId {
        self.push(NodeKind::Constant, Vec::new(), value, false)
    }

    pub fn constant_scalar(&mut self, value: T) -> NodeId {
        self.constant(Mat::scalar(value))
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> Option<T> {
        self.value(id).as_scalar()
    }

    fn push(&mut self, kind: NodeKind, parents: Vec<NodeId>, value: Mat<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { kind, parents, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Appends `op(inputs)` with its forward value computed now.
    pub fn record(&mut self, op: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != op.arity() {
            return Err(Error::invalid(format!(
                "{} takes {} inputs, got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("{}: unknown node {}", op.name(), bad.0)));
        }
        let values: Vec<&Mat<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = op.eval(&values).map_err(|e| match e {
            Error::Shape { left, right, .. } => op.shape_error(left, right),
            other => other,
        })?;
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        Ok(self.push(NodeKind::Op(op), inputs.to_vec(), value, needs_grad))
    }

    pub fn gemm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Gemm, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Transpose, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Subtract, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.record(Primitive::Scale, &[a, s])
    }

    /// Scales by a fixed coefficient.
    pub fn scale_by(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let s = self.constant_scalar(s);
        self.scale(a, s)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Hadamard, &[a, b])
    }

    pub fn broadcast_column(&mut self, a: NodeId, width: usize) -> Result<NodeId> {
        self.record(Primitive::BroadcastColumn { width }, &[a])
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::ReduceMeanRows, &[a])
    }

    pub fn trace(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Trace, &[a])
    }

    pub fn det(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::LuDet, &[a])
    }

    pub fn recip_sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::RecipSqrt, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Relu, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::LogSoftmaxColumns, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.hadamard(a, a)
    }

    /// Sum of all entries as a `1 × 1` node: `1ᵀ·A·1`.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).shape();
        let left = self.constant(Mat::filled(1, r, T::one()));
        let right = self.constant(Mat::filled(c, 1, T::one()));
        let row = self.gemm(left, a)?;
        self.gemm(row, right)
    }

    /// Reverse accumulation from a `1 × 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adjoints: Vec<Option<Mat<T>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Mat::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let NodeKind::Op(op) = node.kind else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = adjoints[i].take() else { continue };
            let contributions = self.pullback(op, node, &upstream)?;
            for (parent, grad) in node.parents.iter().zip(contributions) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut adjoints[parent.0] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.kind != NodeKind::Variable {
                continue;
            }
            let grad = adjoints
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Mat::zeros(node.value.rows(), node.value.cols()));
            if !grad.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            map.insert(NodeId(i), grad);
        }
        Ok(Gradients { map })
    }

    /// Adjoint contribution of `node` to each of its parents.
    fn pullback(&self, op: Primitive, node: &Node<T>, up: &Mat<T>) -> Result<Vec<Mat<T>>> {
        let arg = |k: usize| &self.nodes[node.parents[k].0].value;
        let grads = match op {
            Primitive::Gemm => {
                let (a, b) = (arg(0), arg(1));
                vec![gemm(up, &b.transpose())?, gemm(&a.transpose(), up)?]
            }
            Primitive::Transpose => vec![up.transpose()],
            Primitive::Add => vec![up.clone(), up.clone()],
            Primitive::Subtract => vec![up.clone(), up.scale(-T::one())],
            Primitive::Scale => {
                let (a, s) = (arg(0), arg(1).data()[0]);
                let ds = up.hadamard(a)?.sum();
                vec![up.scale(s), Mat::scalar(ds)]
            }
            Primitive::Hadamard => vec![up.hadamard(arg(1))?, up.hadamard(arg(0))?],
            Primitive::BroadcastColumn { .. } => {
                let rows = up.rows();
                vec![Mat::from_fn(rows, 1, |r, _| up.row(r).iter().copied().sum())]
            }
            Primitive::ReduceMeanRows => {
                let a = arg(0);
                let m = T::from_usize(a.cols()).unwrap();
                vec![Mat::from_fn(a.rows(), a.cols(), |r, _| up.get(r, 0) / m)]
            }
            Primitive::Trace => {
                let n = arg(0).rows();
                vec![Mat::identity(n).scale(up.data()[0])]
            }
            Primitive::LuDet => {
                let a = arg(0);
                let lu = Lu::new(a)?;
                if lu.is_singular() {
                    return Err(Error::DetAdjointSingular);
                }
                let inv = lu.inverse().map_err(|_| Error::DetAdjointSingular)?;
                let coeff = up.data()[0] * node.value.data()[0];
                vec![inv.transpose().scale(coeff)]
            }
            Primitive::RecipSqrt => {
                let a = arg(0);
                let half = T::lit(0.5);
                vec![up.zip_map(a, "reciprocal-sqrt", |g, v| -half * g / (v * v.sqrt()))?]
            }
            Primitive::Relu => {
                vec![up.zip_map(arg(0), "elementwise-relu", |g, v| if v > T::zero() { g } else { T::zero() })?]
            }
            Primitive::LogSoftmaxColumns => {
                let y = &node.value;
                let mut out = up.clone();
                for c in 0..y.cols() {
                    let total: T = (0..y.rows()).map(|r| up.get(r, c)).sum();
                    for r in 0..y.rows() {
                        out.set(r, c, up.get(r, c) - y.get(r, c).exp() * total);
                    }
                }
                vec![out]
            }
        };
        Ok(grads)
    }

    /// Recomputes every operation node from its parents' cached values and
    /// reports whether all of them reproduce bit-exactly.
    pub fn replay_matches(&self) -> Result<bool> {
        for node in &self.nodes {
            let NodeKind::Op(op) = node.kind else { continue };
            let inputs: Vec<&Mat<T>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let again = op.eval(&inputs)?;
            if again.data().iter().zip(node.value.data()).any(|(a, b)| a.integer_decode() != b.integer_decode()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Parents of `id`; always smaller indices.
    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }
}

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and central differences with step `step`.
///
/// `f` records a scalar expression of its leaf argument on the given tape.
/// Relative error per entry is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<T, F>(f: F, x: &Mat<T>, step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    if !(step > T::zero()) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut tape = Tape::new();
    let leaf = tape.variable(x.clone());
    let out = f(&mut tape, leaf)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    let analytic = tape.backward(out)?.wrt(leaf)?.clone();

    let eval_at = |point: Mat<T>| -> Result<T> {
        let mut t = Tape::new();
        let leaf = t.variable(point);
        let out = f(&mut t, leaf)?;
        let v = t.scalar_value(out).ok_or(Error::NonScalarLoss(t.value(out).shape()))?;
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective"));
        }
        Ok(v)
    };

    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..x.data().len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (two * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
