use std::collections::BTreeMap;
use std::sync::Arc;

use super::ops::{self, Aux, NormKind, Op, OpAttrs, OpKind};
use super::{GradError, Tensor};

/// Index of a node in its graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    aux: Aux,
    /// Leaf flag for leaves; for interior nodes, whether any input needs a gradient.
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run tape. Nodes are appended in execution order, so the node
/// list is always a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of the requires-grad leaves, keyed by node.
pub type Gradients = BTreeMap<NodeId, Tensor>;

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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            aux: Aux::None,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }

    pub fn op_name(&self, id: NodeId) -> String {
        self.nodes[id.0].op.name()
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Ids of all leaves created with `requires_grad = true`.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .map(NodeId)
            .filter(|&id| self.is_leaf(id) && self.requires_grad(id))
            .collect()
    }

    /// Records `op` applied to `inputs` and returns the output node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, GradError> {
        if matches!(op, Op::Leaf) {
            return Err(GradError::UnknownOp("leaf".into()));
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(GradError::UnknownNode(bad.0));
        }
        let values: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let (value, aux) = ops::forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            aux,
            requires_grad,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// String-keyed variant of [`Graph::apply`].
    pub fn apply_named(&mut self, kind: &str, inputs: &[NodeId], attrs: &OpAttrs) -> Result<NodeId, GradError> {
        let kind: OpKind = kind.parse()?;
        self.apply(Op::from_kind(kind, attrs)?, inputs)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Linear, &[x, w, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::MatMulT, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Conv2d, &[x, k, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Relu, &[x])
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::MaxPool2, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::GlobalAvgPool, &[x])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        self.apply(Op::Concat, parts)
    }

    pub fn narrow(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, GradError> {
        self.apply(Op::Narrow { start, len }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, GradError> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn row_norm(&mut self, x: NodeId, kind: NormKind) -> Result<NodeId, GradError> {
        self.apply(Op::RowNorm(kind), &[x])
    }

    pub fn col_mean_abs(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::ColMeanAbs, &[x])
    }

    pub fn norm(&mut self, x: NodeId, kind: NormKind) -> Result<NodeId, GradError> {
        self.apply(Op::Norm(kind), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Sum, &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, GradError> {
        self.apply(
            Op::SoftmaxCrossEntropy {
                labels: Arc::from(labels),
            },
            &[logits],
        )
    }

    pub fn frobenius(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Frobenius, &[x])
    }

    /// Reverse sweep from `root`, returning the gradients of every
    /// requires-grad leaf without touching the graph.
    pub fn gradients(&self, root: NodeId) -> Result<Gradients, GradError> {
        let grads = self.sweep(root)?;
        Ok(grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let id = NodeId(i);
                (self.is_leaf(id) && self.requires_grad(id)).then(|| {
                    // Leaves off the path to the root get an explicit zero.
                    (id, g.unwrap_or_else(|| Tensor::zeros(self.value(id).shape())))
                })
            })
            .collect())
    }

    /// Reverse sweep that stores gradients on the nodes.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients, GradError> {
        let grads = self.gradients(root)?;
        for node in &mut self.nodes {
            node.grad = None;
        }
        for (id, g) in &grads {
            self.nodes[id.0].grad = Some(g.clone());
        }
        Ok(grads)
    }

    fn sweep(&self, root: NodeId) -> Result<Vec<Option<Tensor>>, GradError> {
        if root.0 >= self.nodes.len() {
            return Err(GradError::UnknownNode(root.0));
        }
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(GradError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_vec(rv.shape(), vec![1.0]));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].requires_grad).collect();
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let input_grads = ops::backward(&node.op, &inputs, &node.value, &node.aux, &g, &needs);
            for ((src, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(ig)) = (*need, ig) else { continue };
                match &mut grads[src.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(grads)
    }

    /// Re-executes every recorded op with some leaf values replaced and
    /// returns the new value of `root`.
    pub fn replay(&self, root: NodeId, overrides: &BTreeMap<NodeId, Tensor>) -> Result<Tensor, GradError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(root.0 + 1);
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            let v = match &node.op {
                Op::Leaf => overrides.get(&NodeId(i)).unwrap_or(&node.value).clone(),
                op => {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &values[id.0]).collect();
                    ops::forward(op, &inputs)?.0
                }
            };
            values.push(v);
        }
        Ok(values.pop().expect("root is within the graph"))
    }

    /// Smallest distance to a non-differentiable point over all kinked ops
    /// on the path to `root`, with the node attaining it.
    pub fn kink_margin(&self, root: NodeId) -> Option<(NodeId, f64)> {
        let mut best: Option<(NodeId, f64)> = None;
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if !node.requires_grad {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            if let Some(d) = ops::kink_distance(&node.op, &inputs) {
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some((NodeId(i), d));
                }
            }
        }
        best
    }

    /// First node (in execution order) holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.nodes.iter().position(|n| !n.value.all_finite()).map(NodeId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![3.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[&w].data(), &[6.0]);
        assert_eq!(g.grad(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linf_subgradient_sign() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![1.0, -3.0]));
        let n = g.norm(v, NormKind::Linf).unwrap();
        let grads = g.backward(n).unwrap();
        assert_eq!(grads[&v].data(), &[0.0, -1.0]);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.contains_key(&a));
        assert!(!grads.contains_key(&b));
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let r = g.relu(a).unwrap();
        assert!(matches!(g.backward(r), Err(GradError::NonScalarRoot(_))));
    }

    #[test]
    fn replay_reproduces_forward() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, -2.0]));
        let r = g.relu(a).unwrap();
        let s = g.sum(r).unwrap();
        let same = g.replay(s, &BTreeMap::new()).unwrap();
        assert_eq!(same.item(), 1.0);
        let mut o = BTreeMap::new();
        o.insert(a, Tensor::vector(vec![5.0, 1.0]));
        assert_eq!(g.replay(s, &o).unwrap().item(), 6.0);
    }

    #[test]
    fn named_ops_dispatch_and_reject() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, -2.0]));
        let r = g.apply_named("relu", &[a], &OpAttrs::default()).unwrap();
        assert_eq!(g.value(r).data(), &[1.0, 0.0]);
        assert!(matches!(
            g.apply_named("gelu", &[a], &OpAttrs::default()),
            Err(GradError::UnknownOp(_))
        ));
    }
}
