//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and the ids of
//! its parents. Parents always precede their consumers, so a single reverse
//! sweep over the node list is a valid backward schedule.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Parameter, Tensor};
use crate::error::{AmpError, Result};
use crate::special;

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Square,
    Sqrt,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    /// `½(erf(b) − erf(a))`, a Gaussian interval mass in erf units.
    ErfDiff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Neg,
    Exp,
    Ln,
    Sigmoid,
    Tanh,
    Relu,
    Square,
    Sqrt,
    Erf,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<String> },
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    Scale(usize, f64),
    Offset(usize),
    ClampMin(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    ScaleRows(usize, Vec<f64>),
    Reduce(ReduceKind, usize, Option<usize>),
    Gather(usize, Vec<usize>),
    Scatter {
        src: usize,
        dest: Vec<usize>,
        /// per-destination divisor (1 for sum, in-degree for mean)
        divisor: Vec<f64>,
    },
    Slice(usize, usize),
    Stack(Vec<usize>),
    Index(usize, usize),
    Reshape(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Untracked input; its gradient is still retrievable from [`Gradients`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    /// Records a parameter; gradients are routed back to it by name.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        self.push(
            Op::Leaf {
                param: Some(p.name().to_owned()),
            },
            p.value.clone(),
        )
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn elementwise<'t>(
        &'t self,
        op: ElementwiseOp,
        a: Var<'t>,
        b: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let need_b = || {
            b.ok_or_else(|| AmpError::contract(format!("{op:?} requires a second operand")))
        };
        match op {
            ElementwiseOp::Add => self.binary(Binary::Add, a, need_b()?),
            ElementwiseOp::Sub => self.binary(Binary::Sub, a, need_b()?),
            ElementwiseOp::Mul => self.binary(Binary::Mul, a, need_b()?),
            ElementwiseOp::Div => self.binary(Binary::Div, a, need_b()?),
            ElementwiseOp::Neg => self.unary(Unary::Neg, a),
            ElementwiseOp::Exp => self.unary(Unary::Exp, a),
            ElementwiseOp::Log => self.unary(Unary::Ln, a),
            ElementwiseOp::Sigmoid => self.unary(Unary::Sigmoid, a),
            ElementwiseOp::Tanh => self.unary(Unary::Tanh, a),
            ElementwiseOp::Relu => self.unary(Unary::Relu, a),
            ElementwiseOp::Square => self.unary(Unary::Square, a),
            ElementwiseOp::Sqrt => self.unary(Unary::Sqrt, a),
        }
    }

    fn binary<'t>(&'t self, kind: Binary, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.id].value, &nodes[b.id].value);
            let out_shape = broadcast_shape(x, y).ok_or_else(|| {
                AmpError::shape(
                    binary_name(kind),
                    format!("{:?} vs {:?}", x.shape(), y.shape()),
                )
            })?;
            let n: usize = out_shape.iter().product();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let (p, q) = (bget(x, i), bget(y, i));
                out.push(match kind {
                    Binary::Add => p + q,
                    Binary::Sub => p - q,
                    Binary::Mul => p * q,
                    Binary::Div => {
                        if q == 0.0 {
                            return Err(AmpError::Domain {
                                op: "div",
                                index: i,
                                value: q,
                            });
                        }
                        p / q
                    }
                    Binary::ErfDiff => special::erf_interval(p, q),
                });
            }
            Tensor::new(&out_shape, out)?
        };
        Ok(self.push(Op::Binary(kind, a.id, b.id), value))
    }

    fn unary<'t>(&'t self, kind: Unary, a: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.id].value;
            if let Some((name, Some(index))) = match kind {
                Unary::Ln => Some(("log", x.data().iter().position(|&v| v <= 0.0 || v.is_nan()))),
                Unary::Sqrt => Some(("sqrt", x.data().iter().position(|&v| v < 0.0 || v.is_nan()))),
                _ => None,
            } {
                return Err(AmpError::Domain {
                    op: name,
                    index,
                    value: x.data()[index],
                });
            }
            x.map(|v| match kind {
                Unary::Neg => -v,
                Unary::Exp => v.exp(),
                Unary::Ln => v.ln(),
                Unary::Sigmoid => special::sigmoid(v),
                Unary::Tanh => v.tanh(),
                Unary::Relu => v.max(0.0),
                Unary::Square => v * v,
                Unary::Sqrt => v.sqrt(),
                Unary::Erf => special::erf(v),
            })
        };
        Ok(self.push(Op::Unary(kind, a.id), value))
    }

    fn map_node<'t>(&'t self, a: Var<'t>, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = f(&self.nodes.borrow()[a.id].value)?;
        Ok(self.push(op, value))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let v = &nodes[loss.id].value;
        if !v.is_scalar() {
            return Err(AmpError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        let seed = Tensor::ones(v.shape());
        drop(nodes);
        self.backward_seeded(loss, seed)
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `out`
    /// (a vector-Jacobian product).
    pub fn backward_seeded(&self, out: Var<'_>, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[out.id].value.shape() != seed.shape() {
            return Err(AmpError::shape(
                "backward",
                format!(
                    "seed shape {:?} vs output shape {:?}",
                    seed.shape(),
                    nodes[out.id].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.id + 1];
        grads[out.id] = Some(seed);

        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut send = |pid: usize, contrib: Tensor| match &mut grads[pid] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Binary(kind, a, b) => {
                    let (x, y) = (&nodes[*a].value, &nodes[*b].value);
                    let n = g.numel();
                    let mut ga = vec![0.0; n];
                    let mut gb = vec![0.0; n];
                    for i in 0..n {
                        let (p, q, gi) = (bget(x, i), bget(y, i), g.data()[i]);
                        let (da, db) = match kind {
                            Binary::Add => (gi, gi),
                            Binary::Sub => (gi, -gi),
                            Binary::Mul => (gi * q, gi * p),
                            Binary::Div => (gi / q, -gi * p / (q * q)),
                            Binary::ErfDiff => {
                                let c = 1.0 / PI.sqrt();
                                (-gi * c * (-p * p).exp(), gi * c * (-q * q).exp())
                            }
                        };
                        ga[i] = da;
                        gb[i] = db;
                    }
                    send(*a, unbroadcast(ga, g.shape(), x));
                    send(*b, unbroadcast(gb, g.shape(), y));
                }
                Op::Unary(kind, a) => {
                    let x = &nodes[*a].value;
                    let y = &node.value;
                    let mut out = Vec::with_capacity(g.numel());
                    for i in 0..g.numel() {
                        let (xi, yi, gi) = (x.data()[i], y.data()[i], g.data()[i]);
                        out.push(match kind {
                            Unary::Neg => -gi,
                            Unary::Exp => gi * yi,
                            Unary::Ln => gi / xi,
                            Unary::Sigmoid => gi * yi * (1.0 - yi),
                            Unary::Tanh => gi * (1.0 - yi * yi),
                            // subgradient 0 at the kink
                            Unary::Relu => {
                                if xi > 0.0 {
                                    gi
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * xi * gi,
                            Unary::Sqrt => gi / (2.0 * yi),
                            Unary::Erf => gi * 2.0 / PI.sqrt() * (-xi * xi).exp(),
                        });
                    }
                    send(*a, Tensor::new(x.shape(), out)?);
                }
                Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
                Op::Offset(a) => send(*a, g.clone()),
                Op::ClampMin(a, floor) => {
                    let x = &nodes[*a].value;
                    send(*a, g.zip_map(x, |gi, xi| if xi > *floor { gi } else { 0.0 }));
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&nodes[*a].value, &nodes[*b].value);
                    send(*a, g.matmul(&y.transpose())?);
                    send(*b, x.transpose().matmul(&g)?);
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::AddRow(a, r) => {
                    let row = &nodes[*r].value;
                    let (rows, cols) = g.dims2();
                    let mut gr = vec![0.0; cols];
                    for i in 0..rows {
                        for (acc, v) in gr.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    send(*r, Tensor::new(row.shape(), gr)?);
                    send(*a, g.clone());
                }
                Op::ScaleRows(a, coeffs) => {
                    let mut out = g.clone();
                    let cols = out.cols();
                    for (i, c) in coeffs.iter().enumerate() {
                        out.data_mut()[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .for_each(|v| *v *= c);
                    }
                    send(*a, out);
                }
                Op::Reduce(kind, a, axis) => {
                    let x = &nodes[*a].value;
                    send(*a, reduce_backward(*kind, x, *axis, &g)?);
                }
                Op::Gather(a, idx) => {
                    let x = &nodes[*a].value;
                    let cols = x.cols();
                    let mut out = Tensor::zeros(x.shape());
                    for (e, &r) in idx.iter().enumerate() {
                        let src = &g.data()[e * cols..(e + 1) * cols];
                        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    send(*a, out);
                }
                Op::Scatter { src, dest, divisor } => {
                    let x = &nodes[*src].value;
                    let cols = x.cols();
                    let mut out = vec![0.0; x.numel()];
                    for (e, &r) in dest.iter().enumerate() {
                        let inv = 1.0 / divisor[r];
                        for c in 0..cols {
                            out[e * cols + c] = g.data()[r * cols + c] * inv;
                        }
                    }
                    send(*src, Tensor::new(x.shape(), out)?);
                }
                Op::Slice(a, start) => {
                    let x = &nodes[*a].value;
                    let mut out = vec![0.0; x.numel()];
                    out[*start..*start + g.numel()].copy_from_slice(g.data());
                    send(*a, Tensor::new(x.shape(), out)?);
                }
                Op::Stack(items) => {
                    for (i, &p) in items.iter().enumerate() {
                        send(p, Tensor::scalar(g.data()[i]));
                    }
                }
                Op::Index(a, i) => {
                    let x = &nodes[*a].value;
                    let mut out = Tensor::zeros(x.shape());
                    out.data_mut()[*i] = g.item();
                    send(*a, out);
                }
                Op::Reshape(a) => {
                    let x = &nodes[*a].value;
                    send(*a, g.reshape(x.shape())?);
                }
            }
            grads[id] = Some(g);
        }

        let mut by_param: HashMap<String, Vec<usize>> = HashMap::new();
        for (id, node) in nodes.iter().enumerate().take(out.id + 1) {
            if let Op::Leaf { param: Some(name) } = &node.op {
                by_param.entry(name.clone()).or_default().push(id);
            }
        }
        Ok(Gradients { grads, by_param })
    }
}

fn v_shape(tape: &Tape, v: Var<'_>) -> Vec<usize> {
    tape.nodes.borrow()[v.id].value.shape().to_vec()
}

fn binary_name(kind: Binary) -> &'static str {
    match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
        Binary::Div => "div",
        Binary::ErfDiff => "erf_diff",
    }
}

fn broadcast_shape(x: &Tensor, y: &Tensor) -> Option<Vec<usize>> {
    if x.shape() == y.shape() {
        Some(x.shape().to_vec())
    } else if x.is_scalar() {
        Some(y.shape().to_vec())
    } else if y.is_scalar() {
        Some(x.shape().to_vec())
    } else {
        None
    }
}

#[inline]
fn bget(t: &Tensor, i: usize) -> f64 {
    if t.numel() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn unbroadcast(g: Vec<f64>, g_shape: &[usize], target: &Tensor) -> Tensor {
    if target.numel() == g.len() {
        Tensor::new(target.shape(), g).expect("same element count")
    } else {
        debug_assert!(target.is_scalar(), "only scalar broadcast: {g_shape:?}");
        Tensor::new(target.shape(), vec![g.iter().sum()]).expect("scalar")
    }
}

fn reduce_forward(kind: ReduceKind, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let scale = |n: usize| match kind {
        ReduceKind::Sum => 1.0,
        ReduceKind::Mean => 1.0 / n as f64,
    };
    match (axis, x.shape().len()) {
        (None, _) => Ok(Tensor::scalar(x.sum() * scale(x.numel()))),
        (Some(0), 1) => Ok(Tensor::scalar(x.sum() * scale(x.numel()))),
        (Some(0), 2) => {
            let (r, c) = x.dims2();
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v *= scale(r));
            Tensor::vector(out)
        }
        (Some(1), 2) => {
            let (r, c) = x.dims2();
            let out = (0..r).map(|i| x.row(i).iter().sum::<f64>() * scale(c)).collect();
            Tensor::vector(out)
        }
        (Some(ax), _) => Err(AmpError::shape(
            "reduce",
            format!("axis {ax} invalid for shape {:?}", x.shape()),
        )),
    }
}

fn reduce_backward(kind: ReduceKind, x: &Tensor, axis: Option<usize>, g: &Tensor) -> Result<Tensor> {
    let scale = |n: usize| match kind {
        ReduceKind::Sum => 1.0,
        ReduceKind::Mean => 1.0 / n as f64,
    };
    let mut out = Tensor::zeros(x.shape());
    match (axis, x.shape().len()) {
        (None, _) | (Some(0), 1) => {
            let v = g.item() * scale(x.numel());
            out.fill(v);
        }
        (Some(0), 2) => {
            let (r, c) = x.dims2();
            for i in 0..r {
                for j in 0..c {
                    out.set(i, j, g.data()[j] * scale(r));
                }
            }
        }
        (Some(1), 2) => {
            let (r, c) = x.dims2();
            for i in 0..r {
                for j in 0..c {
                    out.set(i, j, g.data()[i] * scale(c));
                }
            }
        }
        _ => unreachable!("validated in forward"),
    }
    Ok(out)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        v_shape(self.tape, *self)
    }

    pub fn add(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Add, self, o)
    }

    pub fn sub(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Sub, self, o)
    }

    pub fn mul(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Mul, self, o)
    }

    pub fn div(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Div, self, o)
    }

    /// `½(erf(hi) − erf(lo))` evaluated without cancellation in the tails.
    pub fn erf_diff(lo: Var<'t>, hi: Var<'t>) -> Result<Var<'t>> {
        lo.tape.binary(Binary::ErfDiff, lo, hi)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Neg, self)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Exp, self)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Ln, self)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Sigmoid, self)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Tanh, self)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Relu, self)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Square, self)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Sqrt, self)
    }

    pub fn erf(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Erf, self)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.tape.map_node(self, Op::Scale(self.id, c), |x| Ok(x.map(|v| v * c)))
    }

    pub fn offset(self, c: f64) -> Result<Var<'t>> {
        self.tape.map_node(self, Op::Offset(self.id), |x| Ok(x.map(|v| v + c)))
    }

    pub fn clamp_min(self, floor: f64) -> Result<Var<'t>> {
        self.tape
            .map_node(self, Op::ClampMin(self.id, floor), |x| Ok(x.map(|v| v.max(floor))))
    }

    pub fn matmul(self, o: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[o.id].value)?
        };
        Ok(self.tape.push(Op::MatMul(self.id, o.id), value))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.tape.map_node(self, Op::Transpose(self.id), |x| {
            if x.shape().len() != 2 {
                return Err(AmpError::shape("transpose", "operand must be a matrix"));
            }
            Ok(x.transpose())
        })
    }

    /// Adds `row` (length `cols`) to every row of a matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, r) = (&nodes[self.id].value, &nodes[row.id].value);
            let (rows, cols) = x.dims2();
            if x.shape().len() != 2 || r.numel() != cols {
                return Err(AmpError::shape(
                    "add_row",
                    format!("{:?} + row {:?}", x.shape(), r.shape()),
                ));
            }
            let mut out = x.clone();
            for i in 0..rows {
                for (o, b) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(r.data()) {
                    *o += b;
                }
            }
            out
        };
        Ok(self.tape.push(Op::AddRow(self.id, row.id), value))
    }

    /// Multiplies row `i` by the constant `coeffs[i]`.
    pub fn scale_rows(self, coeffs: Vec<f64>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape().len() != 2 || coeffs.len() != x.rows() {
                return Err(AmpError::shape(
                    "scale_rows",
                    format!("{} coefficients for shape {:?}", coeffs.len(), x.shape()),
                ));
            }
            let mut out = x.clone();
            let cols = x.cols();
            for (i, c) in coeffs.iter().enumerate() {
                out.data_mut()[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .for_each(|v| *v *= c);
            }
            out
        };
        Ok(self.tape.push(Op::ScaleRows(self.id, coeffs), value))
    }

    pub fn reduce(self, kind: ReduceKind, axis: Option<usize>) -> Result<Var<'t>> {
        self.tape
            .map_node(self, Op::Reduce(kind, self.id, axis), |x| reduce_forward(kind, x, axis))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, None)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, None)
    }

    /// Selects rows of a matrix (rows may repeat).
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape().len() != 2 {
                return Err(AmpError::shape("gather_rows", "operand must be a matrix"));
            }
            let (rows, cols) = x.dims2();
            let mut out = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                if r >= rows {
                    return Err(AmpError::Index {
                        op: "gather_rows",
                        index: r,
                        len: rows,
                    });
                }
                out.extend_from_slice(x.row(r));
            }
            if idx.is_empty() {
                return Err(AmpError::shape("gather_rows", "empty index list"));
            }
            Tensor::matrix(idx.len(), cols, out)?
        };
        Ok(self.tape.push(Op::Gather(self.id, idx.to_vec()), value))
    }

    pub fn slice(self, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape.map_node(self, Op::Slice(self.id, start), |x| {
            if x.shape().len() != 1 || start + len > x.numel() || len == 0 {
                return Err(AmpError::shape(
                    "slice",
                    format!("[{start}, {}) of {:?}", start + len, x.shape()),
                ));
            }
            Tensor::vector(x.data()[start..start + len].to_vec())
        })
    }

    pub fn index(self, i: usize) -> Result<Var<'t>> {
        self.tape.map_node(self, Op::Index(self.id, i), |x| {
            x.data()
                .get(i)
                .map(|&v| Tensor::scalar(v))
                .ok_or(AmpError::Index {
                    op: "index",
                    index: i,
                    len: x.numel(),
                })
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape
            .map_node(self, Op::Reshape(self.id), |x| x.reshape(shape))
    }
}

/// Concatenates scalars into a vector.
pub fn stack<'t>(tape: &'t Tape, items: &[Var<'t>]) -> Result<Var<'t>> {
    let value = {
        let nodes = tape.nodes.borrow();
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            let t = &nodes[v.id].value;
            if !t.is_scalar() {
                return Err(AmpError::shape("stack", format!("non-scalar item {:?}", t.shape())));
            }
            out.push(t.item());
        }
        Tensor::vector(out)?
    };
    Ok(tape.push(Op::Stack(items.iter().map(|v| v.id).collect()), value))
}

/// Row `v` of the output aggregates every message row whose destination is
/// `v`; rows without incoming messages are zero.
pub fn scatter_aggregate<'t>(
    messages: Var<'t>,
    destinations: &[usize],
    n: usize,
    kind: ReduceKind,
) -> Result<Var<'t>> {
    let tape = messages.tape;
    let (value, divisor) = {
        let nodes = tape.nodes.borrow();
        let m = &nodes[messages.id].value;
        let (rows, cols) = m.dims2();
        if m.shape().len() != 2 || destinations.len() != rows {
            return Err(AmpError::shape(
                "scatter_aggregate",
                format!("{} destinations for messages {:?}", destinations.len(), m.shape()),
            ));
        }
        let mut count = vec![0usize; n];
        for &d in destinations {
            if d >= n {
                return Err(AmpError::Index {
                    op: "scatter_aggregate",
                    index: d,
                    len: n,
                });
            }
            count[d] += 1;
        }
        let divisor: Vec<f64> = match kind {
            ReduceKind::Sum => vec![1.0; n],
            ReduceKind::Mean => count.iter().map(|&c| c.max(1) as f64).collect(),
        };
        let mut out = vec![0.0; n * cols];
        for (e, &d) in destinations.iter().enumerate() {
            for c in 0..cols {
                out[d * cols + c] += m.data()[e * cols + c];
            }
        }
        if kind == ReduceKind::Mean {
            for (d, div) in divisor.iter().enumerate() {
                out[d * cols..(d + 1) * cols].iter_mut().for_each(|v| *v /= div);
            }
        }
        (Tensor::matrix(n, cols, out)?, divisor)
    };
    Ok(tape.push(
        Op::Scatter {
            src: messages.id,
            dest: destinations.to_vec(),
            divisor,
        },
        value,
    ))
}

/// Per-node gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    by_param: HashMap<String, Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a node, or `None` if the node does not
    /// influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Adds (`+=`) the gradients of every parameter leaf into the matching
    /// [`Parameter`]s.
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Parameter>) {
        for p in params {
            if let Some(ids) = self.by_param.get(p.name()) {
                for &id in ids {
                    if let Some(g) = &self.grads[id] {
                        p.grad.add_assign(g);
                    }
                }
            }
        }
    }
}
