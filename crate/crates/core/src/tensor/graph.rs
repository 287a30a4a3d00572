use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Matrix, Shape, TensorError};

/// Primitive operations recorded on a [`Graph`].
///
/// Every backward rule is written in terms of these same primitives, so a
/// recorded backward pass is itself differentiable.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Square,
    LeakyRelu(f64),
    Sigmoid,
    Ln,
    Exp,
    /// `1/x`, defined as 0 at 0.
    Recip,
    Sqrt,
    ClampMin(f64),
    MatMul { ta: bool, tb: bool },
    Transpose,
    SumAll,
    /// `1×1` broadcast to the given shape.
    Expand,
    /// `m×n → m×1`
    RowSums,
    /// `m×1 → m×n`
    ExpandCols,
    /// `m×n → 1×n`
    ColSums,
    /// `1×n → m×n`
    ExpandRows,
}

#[derive(Clone, Debug)]
pub(crate) enum Operand {
    Node(usize),
    Const(Rc<Matrix>),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Operand>,
    pub(crate) value: Rc<Matrix>,
}

/// Append-only record of tensor operations.
///
/// Cloning a `Graph` clones the handle, not the nodes. A graph is confined to
/// the thread that created it.
#[derive(Clone, Default)]
pub struct Graph {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a differentiable leaf holding `value`.
    pub fn leaf(&self, value: Matrix) -> Tensor {
        self.push(Op::Leaf, Vec::new(), Rc::new(value))
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<Operand>, value: Rc<Matrix>) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(inputs.iter().all(|o| match o {
            Operand::Node(j) => *j < id,
            Operand::Const(_) => true,
        }));
        nodes.push(Node { op, inputs, value: Rc::clone(&value) });
        Tensor { value, node: Some(NodeRef { graph: self.clone(), id }) }
    }

    fn snapshot(&self, id: usize) -> (Op, Vec<Operand>, Rc<Matrix>) {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        (n.op.clone(), n.inputs.clone(), Rc::clone(&n.value))
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.len())
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

/// A matrix value, optionally attached to a node of a [`Graph`].
///
/// Tensors without a node are constants: gradients never flow into them.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) value: Rc<Matrix>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    pub fn constant(value: Matrix) -> Self {
        Tensor { value: Rc::new(value), node: None }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Matrix::scalar(v))
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn is_constant(&self) -> bool {
        self.node.is_none()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor { value: Rc::clone(&self.value), node: None }
    }

    fn from_graph(graph: &Graph, id: usize, record: bool) -> Tensor {
        let value = graph.value_of(id);
        if record {
            Tensor { value, node: Some(NodeRef { graph: graph.clone(), id }) }
        } else {
            Tensor { value, node: None }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "Tensor#{} {:?}", n.id, self.value),
            None => write!(f, "Tensor(const) {:?}", self.value),
        }
    }
}

/// Resolves the graph shared by the operands, if any of them is attached.
pub(crate) fn join_graph(op: &'static str, operands: &[&Tensor]) -> Result<Option<Graph>, TensorError> {
    let mut found: Option<&Graph> = None;
    for t in operands {
        if let Some(n) = &t.node {
            match found {
                None => found = Some(&n.graph),
                Some(g) if g.same_as(&n.graph) => {}
                Some(_) => return Err(TensorError::GraphMismatch(op)),
            }
        }
    }
    Ok(found.cloned())
}

/// Wraps a freshly computed value, recording it when any operand is attached.
pub(crate) fn record(op_name: &'static str, op: Op, operands: &[&Tensor], value: Matrix) -> Result<Tensor, TensorError> {
    match join_graph(op_name, operands)? {
        None => Ok(Tensor::constant(value)),
        Some(graph) => {
            let inputs = operands
                .iter()
                .map(|t| match &t.node {
                    Some(n) => Operand::Node(n.id),
                    None => Operand::Const(Rc::clone(&t.value)),
                })
                .collect();
            Ok(graph.push(op, inputs, Rc::new(value)))
        }
    }
}

/// Reverse-mode gradients of the scalar `loss` with respect to each of `wrt`.
///
/// With `record` set, every gradient computation is appended to the graph so
/// the returned tensors can be differentiated again. Without it, the results
/// are constants and the graph is left untouched. Tensors the loss does not
/// depend on get a zero gradient of matching shape; contributions from
/// several consumers are summed.
pub fn grad(loss: &Tensor, wrt: &[&Tensor], record: bool) -> Result<Vec<Tensor>, TensorError> {
    if !loss.shape().is_scalar() {
        return Err(TensorError::NotScalar(loss.shape()));
    }
    let zeros = |t: &Tensor| Tensor::constant(Matrix::zeros(t.shape().rows, t.shape().cols));
    let Some(loss_ref) = &loss.node else {
        return Ok(wrt.iter().map(|t| zeros(t)).collect());
    };
    let graph = &loss_ref.graph;
    let n = loss_ref.id + 1;

    let mut is_target = vec![false; n];
    for t in wrt {
        if let Some(r) = &t.node {
            if !r.graph.same_as(graph) {
                return Err(TensorError::GraphMismatch("grad"));
            }
            if r.id < n {
                is_target[r.id] = true;
            }
        }
    }

    // A node needs an adjoint only if some target lies upstream of it.
    let mut needed = is_target.clone();
    {
        let nodes = graph.nodes.borrow();
        for id in 0..n {
            if !needed[id] {
                needed[id] = nodes[id].inputs.iter().any(|o| matches!(o, Operand::Node(j) if needed[*j]));
            }
        }
    }

    let mut adjoint: Vec<Option<Tensor>> = vec![None; n];
    let mut found: Vec<Option<Tensor>> = vec![None; n];
    adjoint[n - 1] = Some(Tensor::scalar(1.0));

    for id in (0..n).rev() {
        if !needed[id] {
            continue;
        }
        let Some(g) = adjoint[id].take() else { continue };
        if is_target[id] {
            found[id] = Some(g.clone());
        }
        let (op, inputs, value) = graph.snapshot(id);
        if matches!(op, Op::Leaf) {
            continue;
        }
        let args: Vec<Tensor> = inputs
            .iter()
            .map(|o| match o {
                Operand::Node(j) => Tensor::from_graph(graph, *j, record),
                Operand::Const(v) => Tensor { value: Rc::clone(v), node: None },
            })
            .collect();
        let want: Vec<bool> = inputs.iter().map(|o| matches!(o, Operand::Node(j) if needed[*j])).collect();
        let out = if record {
            Tensor { value, node: Some(NodeRef { graph: graph.clone(), id }) }
        } else {
            Tensor { value, node: None }
        };
        let contributions = backward_rule(&op, &args, &out, &g, &want)?;
        for (operand, contrib) in inputs.iter().zip(contributions) {
            if let (Operand::Node(j), Some(c)) = (operand, contrib) {
                adjoint[*j] = Some(match adjoint[*j].take() {
                    None => c,
                    Some(prev) => prev.add(&c)?,
                });
            }
        }
    }

    Ok(wrt
        .iter()
        .map(|t| match &t.node {
            Some(r) if r.id < n => found[r.id].clone().unwrap_or_else(|| zeros(t)),
            _ => zeros(t),
        })
        .collect())
}

/// Adjoint contributions of one node to each of its inputs.
fn backward_rule(
    op: &Op,
    x: &[Tensor],
    y: &Tensor,
    g: &Tensor,
    want: &[bool],
) -> Result<Vec<Option<Tensor>>, TensorError> {
    let w = |i: usize| want.get(i).copied().unwrap_or(false);
    let mut out: Vec<Option<Tensor>> = vec![None; x.len()];
    if !want.iter().any(|&b| b) {
        return Ok(out);
    }
    match op {
        Op::Leaf => {}
        Op::Add => {
            if w(0) {
                out[0] = Some(g.clone());
            }
            if w(1) {
                out[1] = Some(g.clone());
            }
        }
        Op::Sub => {
            if w(0) {
                out[0] = Some(g.clone());
            }
            if w(1) {
                out[1] = Some(g.scale(-1.0));
            }
        }
        Op::Mul => {
            if w(0) {
                out[0] = Some(g.mul(&x[1])?);
            }
            if w(1) {
                out[1] = Some(g.mul(&x[0])?);
            }
        }
        Op::Scale(c) => out[0] = Some(g.scale(*c)),
        Op::Square => out[0] = Some(g.mul(&x[0].scale(2.0))?),
        Op::LeakyRelu(slope) => {
            let s = *slope;
            let mask = x[0].value.map(|v| if v >= 0.0 { 1.0 } else { s });
            out[0] = Some(g.mul(&Tensor::constant(mask))?);
        }
        Op::Sigmoid => {
            let dy = y.sub(&y.square())?;
            out[0] = Some(g.mul(&dy)?);
        }
        Op::Ln => out[0] = Some(g.mul(&x[0].recip())?),
        Op::Exp => out[0] = Some(g.mul(y)?),
        Op::Recip => out[0] = Some(g.mul(&y.square())?.scale(-1.0)),
        Op::Sqrt => out[0] = Some(g.mul(&y.recip().scale(0.5))?),
        Op::ClampMin(lo) => {
            let lo = *lo;
            let mask = x[0].value.map(|v| if v >= lo { 1.0 } else { 0.0 });
            out[0] = Some(g.mul(&Tensor::constant(mask))?);
        }
        Op::MatMul { ta, tb } => {
            let (a, b) = (&x[0], &x[1]);
            if w(0) {
                out[0] = Some(if *ta { b.matmul_ext(g, *tb, true)? } else { g.matmul_ext(b, false, !*tb)? });
            }
            if w(1) {
                out[1] = Some(if *tb { g.matmul_ext(a, true, *ta)? } else { a.matmul_ext(g, !*ta, false)? });
            }
        }
        Op::Transpose => out[0] = Some(g.transpose()),
        Op::SumAll => out[0] = Some(g.expand(x[0].shape())?),
        Op::Expand => out[0] = Some(g.sum()),
        Op::RowSums => out[0] = Some(g.expand_cols(x[0].shape().cols)?),
        Op::ExpandCols => out[0] = Some(g.row_sums()),
        Op::ColSums => out[0] = Some(g.expand_rows(x[0].shape().rows)?),
        Op::ExpandRows => out[0] = Some(g.col_sums()),
    }
    Ok(out)
}
