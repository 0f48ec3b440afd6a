//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Every primitive evaluates eagerly and records its inputs, so a
//! [`Tape::backward`] call walks the record in reverse and accumulates one
//! gradient buffer per node. Leaves created with [`Tape::param`] are the
//! only nodes whose gradients callers normally read back.

use super::tensor::Tensor;
use super::{cross_entropy, softmax, PROB_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Row(Var, usize),
    Softmax(Var),
    CrossEntropy(Var, usize),
    SigmoidBce(Var, Tensor),
    Sum(Var),
    Scale(Var, f64),
    AddN(Vec<Var>),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Slice(a, _, _)
            | Op::Row(a, _)
            | Op::Softmax(a)
            | Op::CrossEntropy(a, _)
            | Op::SigmoidBce(a, _)
            | Op::Sum(a)
            | Op::Scale(a, _) => vec![*a],
            Op::Concat(vs) | Op::AddN(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Interprets shapes of a matrix product as `(m, k) x (k, n)`.
fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize)> {
    let (m, k) = match a {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => return None,
    };
    let (k2, n) = match b {
        [k2] => (*k2, 1),
        [k2, n] => (*k2, *n),
        _ => return None,
    };
    if a.len() == 1 && b.len() == 1 {
        return None;
    }
    (k == k2).then_some((m, k, n))
}

fn matmul_shape(a: &[usize], b: &[usize], m: usize, n: usize) -> Vec<usize> {
    match (a.len(), b.len()) {
        (2, 2) => vec![m, n],
        (2, 1) => vec![m],
        _ => vec![n],
    }
}

fn eval<'a>(op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let (m, k, n) = matmul_dims(a.shape(), b.shape())
                .ok_or_else(|| Error::dim("matmul", a.shape(), b.shape()))?;
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; m * n];
            if n == 1 {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ad[i * k..(i + 1) * k];
                    let mut acc = 0.0;
                    for (x, y) in row.iter().zip(bd) {
                        acc += x * y;
                    }
                    *o = acc;
                }
            } else {
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        let brow = &bd[p * n..(p + 1) * n];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            Tensor::from_parts(matmul_shape(a.shape(), b.shape(), m, n), out)
        }
        Op::Add(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape() == b.shape() {
                let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Tensor::from_parts(a.shape().to_vec(), out)
            } else if a.rank() == 2 && b.rank() == 1 && a.cols() == b.len() {
                let n = b.len();
                let out = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + b.data()[i % n])
                    .collect();
                Tensor::from_parts(a.shape().to_vec(), out)
            } else {
                return Err(Error::dim("add", a.shape(), b.shape()));
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape() != b.shape() {
                return Err(Error::dim("mul", a.shape(), b.shape()));
            }
            let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        Op::Tanh(a) => get(*a).map(f64::tanh),
        Op::Sigmoid(a) => get(*a).map(sigmoid),
        Op::Concat(vs) => {
            if vs.is_empty() {
                return Err(Error::Empty { op: "concat" });
            }
            let mut out = Vec::new();
            for v in vs {
                let t = get(*v);
                if t.rank() != 1 {
                    return Err(Error::dim("concat", get(vs[0]).shape(), t.shape()));
                }
                out.extend_from_slice(t.data());
            }
            let n = out.len();
            Tensor::from_parts(vec![n], out)
        }
        Op::Slice(a, start, len) => {
            let a = get(*a);
            if a.rank() != 1 || *len == 0 || start + len > a.len() {
                return Err(Error::dim("slice", a.shape(), &[*start, *len]));
            }
            Tensor::from_parts(vec![*len], a.data()[*start..start + len].to_vec())
        }
        Op::Row(t, idx) => {
            let t = get(*t);
            if t.rank() != 2 {
                return Err(Error::dim("row", t.shape(), &[*idx]));
            }
            if *idx >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "row",
                    index: *idx,
                    len: t.rows(),
                });
            }
            Tensor::from_parts(vec![t.cols()], t.row(*idx).to_vec())
        }
        Op::Softmax(a) => {
            let a = get(*a);
            if a.rank() != 1 {
                return Err(Error::dim("softmax", a.shape(), &[]));
            }
            Tensor::from_parts(a.shape().to_vec(), softmax(a.data())?)
        }
        Op::CrossEntropy(p, target) => Tensor::scalar(cross_entropy(get(*p).data(), *target)?),
        Op::SigmoidBce(z, labels) => {
            let z = get(*z);
            if z.shape() != labels.shape() {
                return Err(Error::dim("sigmoid_bce", z.shape(), labels.shape()));
            }
            let loss = z
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                .sum();
            Tensor::scalar(loss)
        }
        Op::Sum(a) => Tensor::scalar(get(*a).data().iter().sum()),
        Op::Scale(a, c) => get(*a).map(|v| v * c),
        Op::AddN(vs) => {
            let first = get(*vs.first().ok_or(Error::Empty { op: "add_n" })?);
            let mut out = first.to_vec();
            for v in &vs[1..] {
                let t = get(*v);
                if t.shape() != first.shape() {
                    return Err(Error::dim("add_n", first.shape(), t.shape()));
                }
                for (o, x) in out.iter_mut().zip(t.data()) {
                    *o += x;
                }
            }
            Tensor::from_parts(first.shape().to_vec(), out)
        }
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// A leaf treated as data.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, |v| &self.nodes[v.0].value)?;
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product; either operand may be a vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// Elementwise sum; a vector right operand is broadcast over matrix rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice(a, start, len))
    }

    /// Row `index` of a matrix (embedding lookup).
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        self.push(Op::Row(table, index))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }

    /// `-ln p[target]` with the probability floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        self.push(Op::CrossEntropy(probs, target))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `labels`.
    pub fn sigmoid_bce(&mut self, logits: Var, labels: Tensor) -> Result<Var> {
        self.push(Op::SigmoidBce(logits, labels))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::AddN(parts.to_vec()))
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Propagates d(loss)/d(node) backwards from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::dim("backward", loss_value.shape(), &[1]));
        }
        if !loss_value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (m, k, n) = matmul_dims(at.shape(), bt.shape()).expect("checked in forward");
                let (ad, bd) = (at.data(), bt.data());
                if self.wants(*a) {
                    let da = accumulate(&mut grads[a.0], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                acc += x * y;
                            }
                            da[i * k + p] += acc;
                        }
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[b.0], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, x) in drow.iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    let da = accumulate(&mut grads[a.0], g.len());
                    for (d, x) in da.iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if self.wants(*b) {
                    let n = val(*b).len();
                    let db = accumulate(&mut grads[b.0], n);
                    for (i, x) in g.iter().enumerate() {
                        db[i % n] += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if self.wants(*a) {
                    let da = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bd[i];
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * ad[i];
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let da = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let da = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if self.wants(*p) {
                        let dp = accumulate(&mut grads[p.0], n);
                        for (d, x) in dp.iter_mut().zip(&g[offset..offset + n]) {
                            *d += x;
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice(a, start, len) => {
                let da = accumulate(&mut grads[a.0], val(*a).len());
                for (d, x) in da[*start..start + len].iter_mut().zip(g) {
                    *d += x;
                }
            }
            Op::Row(t, idx) => {
                let tv = val(*t);
                let c = tv.cols();
                let dt = accumulate(&mut grads[t.0], tv.len());
                for (d, x) in dt[idx * c..(idx + 1) * c].iter_mut().zip(g) {
                    *d += x;
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                let da = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    da[i] += y[i] * (g[i] - dot);
                }
            }
            Op::CrossEntropy(p, target) => {
                let pv = val(*p).data();
                let dp = accumulate(&mut grads[p.0], pv.len());
                if pv[*target] > PROB_FLOOR {
                    dp[*target] -= g[0] / pv[*target];
                }
            }
            Op::SigmoidBce(z, labels) => {
                let zv = val(*z).data();
                let dz = accumulate(&mut grads[z.0], zv.len());
                for i in 0..zv.len() {
                    dz[i] += g[0] * (sigmoid(zv[i]) - labels.data()[i]);
                }
            }
            Op::Sum(a) => {
                let da = accumulate(&mut grads[a.0], val(*a).len());
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Scale(a, c) => {
                let da = accumulate(&mut grads[a.0], g.len());
                for (d, x) in da.iter_mut().zip(g) {
                    *d += c * x;
                }
            }
            Op::AddN(parts) => {
                for p in parts {
                    if self.wants(*p) {
                        let dp = accumulate(&mut grads[p.0], g.len());
                        for (d, x) in dp.iter_mut().zip(g) {
                            *d += x;
                        }
                    }
                }
            }
        }
    }
}
