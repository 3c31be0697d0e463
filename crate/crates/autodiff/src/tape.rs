//! The Wengert list and its forward, backward and replay passes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::{AdError, Shape};

pub(crate) type NodeId = usize;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Var(Rc<str>),
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Powf(NodeId, f64),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    /// Reduce a matrix over one axis: 0 sums rows away, 1 sums columns away.
    SumAxis(NodeId, usize),
    /// Repeat a vector `n` times along a new axis (inverse of `SumAxis`).
    Expand(NodeId, usize, usize),
    /// Fill the node's shape with a single-element operand.
    Broadcast(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Gather(NodeId, Rc<[usize]>),
    ScatterAdd(NodeId, Rc<[usize]>),
    StopGradient(NodeId),
}

impl Op {
    pub(crate) fn parents(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Var(_) | Const => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Neg(a) | Exp(a) | Log(a) | Sin(a) | Cos(a) | Powf(a, _) | Sigmoid(a) | Softplus(a)
            | Tanh(a) | Sum(a) | SumAxis(a, _) | Expand(a, _, _) | Broadcast(a) | Transpose(a)
            | Reshape(a) | StopGradient(a) => [Some(a), None],
            Gather(a, _) | ScatterAdd(a, _) => [Some(a), None],
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Shape,
    pub(crate) value: Vec<f64>,
}

/// Record of every operation performed on [`Expr`] handles.
///
/// A tape is single-threaded (`!Sync`); build one per thread. Values are
/// computed eagerly as nodes are appended, so the list is always in
/// topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Expr<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

/// Named values used by [`Tape::evaluate`].
pub type Bindings = HashMap<String, Vec<f64>>;

trait Values {
    fn get(&self, id: NodeId) -> &[f64];
}

impl Values for [Node] {
    fn get(&self, id: NodeId) -> &[f64] {
        &self[id].value
    }
}

struct Replay<'a> {
    nodes: &'a [Node],
    values: &'a [Option<Vec<f64>>],
}

impl Values for Replay<'_> {
    fn get(&self, id: NodeId) -> &[f64] {
        self.values[id].as_deref().unwrap_or(&self.nodes[id].value)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn compute<V: Values + ?Sized>(op: &Op, shape: &Shape, nodes: &[Node], vals: &V) -> Vec<f64> {
    use Op::*;
    let map = |a: NodeId, f: fn(f64) -> f64| vals.get(a).iter().map(|&x| f(x)).collect();
    match op {
        Var(_) | Const => unreachable!("leaves carry their own value"),
        Add(a, b) => zip_with(vals.get(*a), vals.get(*b), |x, y| x + y),
        Sub(a, b) => zip_with(vals.get(*a), vals.get(*b), |x, y| x - y),
        Mul(a, b) => zip_with(vals.get(*a), vals.get(*b), |x, y| x * y),
        Div(a, b) => zip_with(vals.get(*a), vals.get(*b), |x, y| x / y),
        Neg(a) => map(*a, |x| -x),
        Exp(a) => map(*a, f64::exp),
        Log(a) => map(*a, f64::ln),
        Sin(a) => map(*a, f64::sin),
        Cos(a) => map(*a, f64::cos),
        Powf(a, p) => vals.get(*a).iter().map(|&x| x.powf(*p)).collect(),
        Sigmoid(a) => map(*a, sigmoid),
        Softplus(a) => map(*a, softplus),
        Tanh(a) => map(*a, f64::tanh),
        Sum(a) => vec![vals.get(*a).iter().sum()],
        SumAxis(a, axis) => {
            let (r, c) = nodes[*a].shape.as_matrix().expect("sum_axis on a matrix");
            let v = vals.get(*a);
            if *axis == 0 {
                let mut out = vec![0.0; c];
                for row in v.chunks(c) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                out
            } else {
                (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect()
            }
        }
        Expand(a, axis, n) => {
            let v = vals.get(*a);
            if *axis == 0 {
                let mut out = Vec::with_capacity(n * v.len());
                for _ in 0..*n {
                    out.extend_from_slice(v);
                }
                out
            } else {
                v.iter().flat_map(|&x| std::iter::repeat_n(x, *n)).collect()
            }
        }
        Broadcast(a) => vec![vals.get(*a)[0]; shape.numel()],
        MatMul(a, b) => {
            let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
            let (va, vb) = (vals.get(*a), vals.get(*b));
            match (sa.dims(), sb.dims()) {
                ([m, k], [_, n]) => {
                    let (m, k, n) = (*m, *k, *n);
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        let row = &mut out[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, y) in row.iter_mut().zip(&vb[p * n..(p + 1) * n]) {
                                *o += x * y;
                            }
                        }
                    }
                    out
                }
                ([m, k], [_]) => (0..*m)
                    .map(|i| va[i * k..(i + 1) * k].iter().zip(vb).map(|(x, y)| x * y).sum())
                    .collect(),
                ([k], [_, n]) => {
                    let n = *n;
                    let mut out = vec![0.0; n];
                    for p in 0..*k {
                        for (o, y) in out.iter_mut().zip(&vb[p * n..(p + 1) * n]) {
                            *o += va[p] * y;
                        }
                    }
                    out
                }
                _ => unreachable!("matmul shapes checked at construction"),
            }
        }
        Transpose(a) => {
            let (r, c) = nodes[*a].shape.as_matrix().expect("transpose of a matrix");
            let v = vals.get(*a);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
            out
        }
        Reshape(a) | StopGradient(a) => vals.get(*a).to_vec(),
        Gather(a, idx) => {
            let v = vals.get(*a);
            idx.iter().map(|&i| v[i]).collect()
        }
        ScatterAdd(a, idx) => {
            let mut out = vec![0.0; shape.numel()];
            for (&i, x) in idx.iter().zip(vals.get(*a)) {
                out[i] += x;
            }
            out
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, op: Op, values: Vec<f64>, shape: Shape) -> Expr<'_> {
        assert_eq!(
            values.len(),
            shape.numel(),
            "leaf has {} values for shape {shape}",
            values.len()
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, value: values });
        Expr { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push_op(&self, op: Op, shape: Shape) -> Expr<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            compute(&op, &shape, &nodes, nodes.as_slice())
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, value });
        Expr { tape: self, id: nodes.len() - 1 }
    }

    /// Named input variable. Names are what [`Tape::evaluate`] rebinds.
    pub fn var(&self, name: &str, values: Vec<f64>, shape: impl Into<Shape>) -> Expr<'_> {
        self.push_leaf(Op::Var(name.into()), values, shape.into())
    }

    pub fn constant(&self, values: Vec<f64>, shape: impl Into<Shape>) -> Expr<'_> {
        self.push_leaf(Op::Const, values, shape.into())
    }

    pub fn scalar(&self, value: f64) -> Expr<'_> {
        self.constant(vec![value], Shape::scalar())
    }

    pub fn zeros(&self, shape: impl Into<Shape>) -> Expr<'_> {
        let shape = shape.into();
        self.constant(vec![0.0; shape.numel()], shape)
    }

    pub fn full(&self, value: f64, shape: impl Into<Shape>) -> Expr<'_> {
        let shape = shape.into();
        self.constant(vec![value; shape.numel()], shape)
    }

    pub(crate) fn shape_of(&self, id: NodeId) -> Shape {
        self.nodes.borrow()[id].shape.clone()
    }

    fn truncate(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
    }

    /// Re-runs the forward pass for `expr` with the named variables taken
    /// from `bindings` instead of the values they were recorded with.
    ///
    /// Every variable reachable from `expr` must be bound.
    pub fn evaluate(&self, expr: Expr<'_>, bindings: &Bindings) -> Result<Vec<f64>, AdError> {
        let nodes = self.nodes.borrow();
        let last = expr.id;
        let mut reach = vec![false; last + 1];
        reach[last] = true;
        for i in (0..=last).rev() {
            if reach[i] {
                for p in nodes[i].op.parents().into_iter().flatten() {
                    reach[p] = true;
                }
            }
        }
        let mut values: Vec<Option<Vec<f64>>> = vec![None; last + 1];
        for i in 0..=last {
            if !reach[i] {
                continue;
            }
            let node = &nodes[i];
            let v = match &node.op {
                Op::Var(name) => {
                    let bound = bindings
                        .get(name.as_ref())
                        .ok_or_else(|| AdError::UnboundVariable(name.to_string()))?;
                    if bound.len() != node.shape.numel() {
                        return Err(AdError::BindingSize {
                            name: name.to_string(),
                            expected: node.shape.numel(),
                            got: bound.len(),
                        });
                    }
                    bound.clone()
                }
                Op::Const => continue,
                op => {
                    let replay = Replay { nodes: &nodes, values: &values };
                    compute(op, &node.shape, &nodes, &replay)
                }
            };
            values[i] = Some(v);
        }
        Ok(values[last].take().unwrap_or_else(|| nodes[last].value.clone()))
    }

    /// Reverse-mode gradient of a scalar `output` with respect to each of
    /// `inputs`.
    ///
    /// Inputs may be variables or intermediate nodes. An input that
    /// `output` does not depend on gets a zero gradient. With
    /// `create_graph` the backward pass is itself recorded, so the returned
    /// expressions can be differentiated again; without it they are
    /// constants and the tape is left at its original length plus one
    /// node per input.
    pub fn gradient<'t>(
        &'t self,
        output: Expr<'t>,
        inputs: &[Expr<'t>],
        create_graph: bool,
    ) -> Result<Vec<Expr<'t>>, AdError> {
        let out_shape = self.shape_of(output.id);
        if out_shape.numel() != 1 {
            return Err(AdError::NonScalarOutput(out_shape));
        }
        let start_len = self.len();
        let grads = self.backward(output, inputs);
        if create_graph {
            return Ok(grads);
        }
        let detached: Vec<(Vec<f64>, Shape)> = grads
            .iter()
            .map(|g| (g.value(), self.shape_of(g.id)))
            .collect();
        self.truncate(start_len);
        Ok(detached
            .into_iter()
            .map(|(v, s)| self.constant(v, s))
            .collect())
    }

    fn backward<'t>(&'t self, output: Expr<'t>, inputs: &[Expr<'t>]) -> Vec<Expr<'t>> {
        let out = output.id;
        let lo = inputs.iter().map(|x| x.id).min().unwrap_or(out).min(out);
        let span = out + 1 - lo;

        // Forward sweep: which nodes in [lo, out] depend on some input.
        let mut needs = vec![false; span];
        {
            let nodes = self.nodes.borrow();
            for x in inputs {
                if x.id <= out {
                    needs[x.id - lo] = true;
                }
            }
            for i in lo..=out {
                if needs[i - lo] || matches!(nodes[i].op, Op::StopGradient(_)) {
                    continue;
                }
                needs[i - lo] = nodes[i]
                    .op
                    .parents()
                    .into_iter()
                    .flatten()
                    .any(|p| p >= lo && needs[p - lo]);
            }
        }

        let mut adjoint: Vec<Option<Expr<'t>>> = vec![None; span];
        if needs[out - lo] {
            adjoint[out - lo] = Some(self.full(1.0, self.shape_of(out)));
        }
        for i in (lo..=out).rev() {
            let Some(g) = adjoint[i - lo] else { continue };
            if !needs[i - lo] {
                continue;
            }
            let op = self.nodes.borrow()[i].op.clone();
            let need = |p: NodeId| p >= lo && needs[p - lo];
            for (parent, contribution) in self.vjp(i, &op, g, need) {
                let slot = &mut adjoint[parent - lo];
                *slot = Some(match *slot {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }

        inputs
            .iter()
            .map(|x| {
                if x.id > out {
                    return self.zeros(self.shape_of(x.id));
                }
                adjoint[x.id - lo].unwrap_or_else(|| self.zeros(self.shape_of(x.id)))
            })
            .collect()
    }

    /// Vector-Jacobian products of node `id` for each parent that needs one,
    /// built from ordinary tape operations so they are differentiable.
    fn vjp<'t>(
        &'t self,
        id: NodeId,
        op: &Op,
        g: Expr<'t>,
        need: impl Fn(NodeId) -> bool,
    ) -> Vec<(NodeId, Expr<'t>)> {
        use Op::*;
        let e = |i: NodeId| Expr { tape: self, id: i };
        let out = e(id);
        let mut res = Vec::with_capacity(2);
        let mut push = |p: NodeId, f: &dyn Fn() -> Expr<'t>| {
            if need(p) {
                res.push((p, f()));
            }
        };
        match op {
            Var(_) | Const | StopGradient(_) => {}
            Add(a, b) => {
                push(*a, &|| g);
                push(*b, &|| g);
            }
            Sub(a, b) => {
                push(*a, &|| g);
                push(*b, &|| -g);
            }
            Mul(a, b) => {
                push(*a, &|| g * e(*b));
                push(*b, &|| g * e(*a));
            }
            Div(a, b) => {
                push(*a, &|| g / e(*b));
                push(*b, &|| -(g * out) / e(*b));
            }
            Neg(a) => push(*a, &|| -g),
            Exp(a) => push(*a, &|| g * out),
            Log(a) => push(*a, &|| g / e(*a)),
            Sin(a) => push(*a, &|| g * e(*a).cos()),
            Cos(a) => push(*a, &|| -(g * e(*a).sin())),
            Powf(a, p) => {
                let p = *p;
                push(*a, &|| g * e(*a).powf(p - 1.0) * p);
            }
            Sigmoid(a) => push(*a, &|| g * out * (1.0 - out)),
            Softplus(a) => push(*a, &|| g * e(*a).sigmoid()),
            Tanh(a) => push(*a, &|| g * (1.0 - out * out)),
            Sum(a) => push(*a, &|| g.broadcast_to(self.shape_of(*a))),
            SumAxis(a, axis) => {
                let (r, c) = self.shape_of(*a).as_matrix().expect("matrix");
                let n = if *axis == 0 { r } else { c };
                push(*a, &|| g.expand(*axis, n));
            }
            Expand(a, axis, _) => push(*a, &|| g.sum_axis(*axis)),
            Broadcast(a) => push(*a, &|| g.sum().reshape(self.shape_of(*a))),
            MatMul(a, b) => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                let (ea, eb) = (e(*a), e(*b));
                match (sa.dims(), sb.dims()) {
                    ([_, _], [_, _]) => {
                        push(*a, &|| g.matmul(eb.t()));
                        push(*b, &|| ea.t().matmul(g));
                    }
                    ([m, k], [_]) => {
                        let (m, k) = (*m, *k);
                        push(*a, &|| {
                            g.reshape([m, 1]).matmul(eb.reshape([1, k]))
                        });
                        push(*b, &|| ea.t().matmul(g));
                    }
                    ([k], [_, n]) => {
                        let (k, n) = (*k, *n);
                        push(*a, &|| eb.matmul(g));
                        push(*b, &|| ea.reshape([k, 1]).matmul(g.reshape([1, n])));
                    }
                    _ => unreachable!(),
                }
            }
            Transpose(a) => push(*a, &|| g.t()),
            Reshape(a) => push(*a, &|| g.reshape(self.shape_of(*a))),
            Gather(a, idx) => push(*a, &|| g.scatter_add_rc(idx.clone(), self.shape_of(*a))),
            ScatterAdd(a, idx) => push(*a, &|| g.gather_rc(idx.clone(), self.shape_of(*a))),
        }
        res
    }
}
