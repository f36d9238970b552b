//! Dense-tensor reverse-mode differentiation.
//!
//! A [`Graph`] is a define-by-run tape: every op computes its value eagerly,
//! records its inputs, and [`Graph::backward`] replays the tape in reverse to
//! accumulate analytic gradients into the leaves. One graph lives for one
//! training step. Values are f64; in [`Precision::Single`] mode every op
//! output (and every optimizer update) is rounded through f32 so fast-mode
//! runs behave like a single-precision engine while sharing one code path.
//!
//! Every op checks its output for NaN/Inf and reports a numeric fault rather
//! than letting poison propagate.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod ops;
pub mod optim;

pub use array::Array;

use crate::error::{HnrError, Result};
use indexmap::IndexMap;

/// Storage precision for op outputs and parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Full f64; required for gradient checks and determinism guarantees.
    Double,
    /// Round every op output through f32.
    Single,
}

/// Handle to a tensor on a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tid(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(Tid, Tid),
    Sub(Tid, Tid),
    Mul(Tid, Tid),
    Div(Tid, Tid),
    Neg(Tid),
    Scale(Tid, f64),
    AddScalar(Tid),
    Matmul(Tid, Tid),
    Exp(Tid),
    Log(Tid),
    Tanh(Tid),
    Relu(Tid),
    Softplus(Tid),
    Sigmoid(Tid),
    Sqrt(Tid),
    SumAll(Tid),
    MeanAll(Tid),
    MeanRows(Tid),
    MaxOverAxis(Tid, usize),
    Softmax(Tid),
    LogSoftmax(Tid),
    LayerNorm(Tid),
    Concat(Vec<Tid>, usize),
    SliceRows(Tid, usize, usize),
    SliceCols(Tid, usize, usize),
    Transpose(Tid),
    Reshape(Tid),
    CosineSim(Tid, Tid),
    CumsumExclusive(Tid),
    SelectRows(Tid, Vec<usize>),
}

pub(crate) struct Node {
    pub value: Array,
    pub requires_grad: bool,
    /// Accumulated gradient; populated for leaves after backward.
    pub grad: Option<Array>,
    pub op: Op,
}

/// Define-by-run tape.
pub struct Graph {
    precision: Precision,
    grad_enabled: bool,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Self { precision, grad_enabled: true, nodes: Vec::new() }
    }

    /// Graph that records no backward information (evaluation mode).
    pub fn inference(precision: Precision) -> Self {
        Self { precision, grad_enabled: false, nodes: Vec::new() }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input. Its gradient is available after `backward`.
    pub fn leaf(&mut self, value: Array) -> Tid {
        let requires_grad = self.grad_enabled;
        self.push_unchecked(value, requires_grad, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Tid {
        self.push_unchecked(value, false, Op::Const)
    }

    pub fn value(&self, t: Tid) -> &Array {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tid) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    /// Gradient of a leaf after `backward`; `None` if never populated.
    pub fn grad(&self, t: Tid) -> Option<&Array> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn scalar_value(&self, t: Tid) -> f64 {
        debug_assert_eq!(self.value(t).len(), 1);
        self.value(t).data()[0]
    }

    fn requires(&self, t: Tid) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn push_unchecked(&mut self, mut value: Array, requires_grad: bool, op: Op) -> Tid {
        if self.precision == Precision::Single {
            value.round_to_f32();
        }
        let op = if self.grad_enabled { op } else { Op::Const };
        self.nodes.push(Node { value, requires_grad: requires_grad && self.grad_enabled, grad: None, op });
        Tid(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Array, requires_grad: bool, op: Op, opname: &'static str) -> Result<Tid> {
        if !value.all_finite() {
            return Err(HnrError::NumericFault { op: opname });
        }
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// repeated calls; intermediate gradients are scratch per call.
    pub fn backward(&mut self, loss: Tid) -> Result<()> {
        if !self.grad_enabled {
            return Err(HnrError::Contract("backward on an inference graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(HnrError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        local[loss.0] = Some(Array::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gout) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(g) => g.add_assign(&gout),
                    slot @ None => *slot = Some(gout),
                }
                continue;
            }
            self.backprop_op(i, &gout, &mut local)?;
        }
        Ok(())
    }

    /// Clear accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn accumulate(local: &mut [Option<Array>], t: Tid, g: Array) {
        match &mut local[t.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Named persistent parameter storage, independent of any graph.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    values: IndexMap<String, Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.values.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.values.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.values().map(|a| a.len()).sum()
    }

    /// Merge another set (used to combine subsystem checkpoints).
    pub fn extend(&mut self, other: ParamSet) {
        for (k, v) in other.values {
            self.values.insert(k, v);
        }
    }
}

/// Per-graph binding of a [`ParamSet`]: each parameter becomes a leaf.
pub struct BoundParams {
    tids: IndexMap<String, Tid>,
}

impl BoundParams {
    pub fn bind(graph: &mut Graph, params: &ParamSet) -> Self {
        let mut tids = IndexMap::new();
        for (name, value) in params.iter() {
            tids.insert(name.clone(), graph.leaf(value.clone()));
        }
        Self { tids }
    }

    /// Bind as constants (frozen parameters).
    pub fn bind_frozen(graph: &mut Graph, params: &ParamSet) -> Self {
        let mut tids = IndexMap::new();
        for (name, value) in params.iter() {
            tids.insert(name.clone(), graph.constant(value.clone()));
        }
        Self { tids }
    }

    pub fn tid(&self, name: &str) -> Tid {
        *self
            .tids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    /// Collect leaf gradients after backward, zero-filled when absent.
    pub fn grads(&self, graph: &Graph, params: &ParamSet) -> IndexMap<String, Array> {
        let mut out = IndexMap::new();
        for (name, tid) in &self.tids {
            let g = graph
                .grad(*tid)
                .cloned()
                .unwrap_or_else(|| Array::zeros(params.get(name).expect("param").shape().to_vec()));
            out.insert(name.clone(), g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new(Precision::Double);
        let x = g.leaf(Array::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new(Precision::Double);
        let x = g.leaf(Array::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[12.0]);
    }

    #[test]
    fn unused_parameter_has_no_grad() {
        let mut g = Graph::new(Precision::Double);
        let x = g.leaf(Array::scalar(3.0));
        let p = g.leaf(Array::scalar(5.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(p).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new(Precision::Double);
        let x = g.leaf(Array::from_vec(vec![2], vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(HnrError::Contract(_))));
    }

    #[test]
    fn single_precision_rounds_values() {
        let mut g = Graph::new(Precision::Single);
        let x = g.leaf(Array::scalar(0.1));
        assert_eq!(g.value(x).data()[0], 0.1f32 as f64);
    }

    #[test]
    fn backward_linearity() {
        // grad of (a + b) equals grad of a plus grad of b.
        let build = |w: f64| {
            let mut g = Graph::new(Precision::Double);
            let x = g.leaf(Array::from_vec(vec![3], vec![1.0, -2.0, 0.5]));
            let c = g.constant(Array::from_vec(vec![3], vec![2.0, 3.0, -1.0]));
            let xx = g.mul(x, x).unwrap();
            let a = g.mul(xx, c).unwrap();
            let la = g.sum_all(a).unwrap();
            let lb = g.sum_all(xx).unwrap();
            let lb = g.scale(lb, w).unwrap();
            (g, x, la, lb)
        };
        let (mut g, x, la, lb) = build(2.5);
        let total = g.add(la, lb).unwrap();
        g.backward(total).unwrap();
        let sum_grad = g.grad(x).unwrap().clone();

        let (mut g2, x2, la2, lb2) = build(2.5);
        g2.backward(la2).unwrap();
        g2.backward(lb2).unwrap();
        let parts_grad = g2.grad(x2).unwrap().clone();
        for (a, b) in sum_grad.data().iter().zip(parts_grad.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
