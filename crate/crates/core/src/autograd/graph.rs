use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a [`Graph`].
///
/// A `Var` is only meaningful for the graph that created it; passing it to
/// another graph is reported as a state error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    id: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Broadcast(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Powf(usize, f64),
    Softmax(usize, usize),
    Sum(usize, usize),
    Mean(usize, usize),
    SumAll(usize),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Transpose(usize),
    L2Norm(usize, usize),
    Squash(usize, usize),
    GatherRows(usize, Vec<usize>),
    Clamp(usize, f64, f64),
    Max(usize, Vec<usize>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Every op evaluates eagerly and appends one node, so node order is a
/// topological order. Ops check shapes and reject non-finite results at the
/// point they are produced. Ops with a discrete branch (`max`, `clamp`)
/// append their branch decisions to a trace so finite-difference checks can
/// detect stencils that cross a kink.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    trace: Vec<u64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Branch decisions recorded by `max` and `clamp`, in evaluation order.
    pub fn trace(&self) -> &[u64] {
        &self.trace
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let id = self.index(v).expect("var from another graph");
        &self.nodes[id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {} does not belong to this evaluated graph",
                v.id
            )));
        }
        Ok(v.id)
    }

    fn var(&self, id: usize) -> Var {
        Var { graph: self.id, id }
    }

    fn val(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    // ----- leaves -----

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Leaf backed by a shared tensor; no copy of the data is made.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    // ----- binary ops -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {:?} by {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(ia, ib), &[ia, ib])
    }

    fn same_shape(&self, op: &'static str, ia: usize, ib: usize) -> Result<()> {
        if self.val(ia).shape() != self.val(ib).shape() {
            return Err(Error::shape(
                op,
                format!(
                    "operands have shapes {:?} and {:?}",
                    self.val(ia).shape(),
                    self.val(ib).shape()
                ),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.same_shape(name, ia, ib)?;
        let (ta, tb) = (self.val(ia), self.val(ib));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, out, op(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Broadcasts to `shape`: same rank, each source extent is 1 or equal.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.index(a)?;
        let src = self.val(ia);
        let map = broadcast_map(src.shape(), shape).ok_or_else(|| {
            Error::shape(
                "broadcast_to",
                format!("cannot broadcast {:?} to {:?}", src.shape(), shape),
            )
        })?;
        let data = map.iter().map(|&i| src.data()[i]).collect();
        self.push("broadcast_to", Tensor::from_parts(shape.to_vec(), data), Op::Broadcast(ia), &[ia])
    }

    // ----- unary ops -----

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.val(ia).map(f);
        self.push(name, out, op, &[ia])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("scale", a, |x| x * k, Op::Scale(ia, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("add_scalar", a, |x| x + k, Op::AddScalar(ia))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("tanh", a, f64::tanh, Op::Tanh(ia))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(ia))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        if self.val(ia).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.unary("log", a, f64::ln, Op::Log(ia))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("exp", a, f64::exp, Op::Exp(ia))
    }

    /// Elementwise `x^p` for a constant exponent.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let ia = self.index(a)?;
        self.unary("powf", a, |x| x.powf(p), Op::Powf(ia, p))
    }

    /// Elementwise clamp to `[low, high]`. Gradient is zero outside the range.
    pub fn clamp(&mut self, a: Var, low: f64, high: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let regions: Vec<u64> = self
            .val(ia)
            .data()
            .iter()
            .map(|&x| if x < low { 0 } else if x > high { 2 } else { 1 })
            .collect();
        let v = self.unary("clamp", a, |x| x.clamp(low, high), Op::Clamp(ia, low, high))?;
        self.trace.extend(regions);
        Ok(v)
    }

    // ----- axis ops -----

    fn check_axis(&self, op: &'static str, id: usize, axis: usize) -> Result<()> {
        let rank = self.val(id).rank();
        if axis >= rank {
            return Err(Error::shape(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis("softmax", ia, axis)?;
        let src = self.val(ia);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let x = src.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let t = Tensor::from_parts(src.shape().to_vec(), out);
        self.push("softmax", t, Op::Softmax(ia, axis), &[ia])
    }

    fn reduce(&mut self, name: &'static str, a: Var, axis: usize, op: fn(usize, usize) -> Op, mean: bool) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis(name, ia, axis)?;
        let src = self.val(ia);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let x = src.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = o * len * inner + j * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = 1;
        self.push(name, Tensor::from_parts(shape, out), op(ia, axis), &[ia])
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce("sum", a, axis, Op::Sum, false)
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce("mean", a, axis, Op::Mean, true)
    }

    /// Sum of every entry, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let total = self.val(ia).data().iter().sum();
        self.push("sum_all", Tensor::scalar(total), Op::SumAll(ia), &[ia])
    }

    /// Euclidean norm along `axis`, keeping it with extent 1.
    pub fn l2_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis("l2_norm", ia, axis)?;
        let src = self.val(ia);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let x = src.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let sq: f64 = (0..len).map(|j| x[o * len * inner + j * inner + i].powi(2)).sum();
                out[o * inner + i] = sq.sqrt();
            }
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = 1;
        self.push("l2_norm", Tensor::from_parts(shape, out), Op::L2Norm(ia, axis), &[ia])
    }

    /// Capsule squashing along `axis`: each vector `s` maps to
    /// `s * |s| / (1 + |s|^2)`, so its norm becomes `|s|^2 / (1 + |s|^2)`.
    /// The zero vector maps to zero.
    pub fn squash(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis("squash", ia, axis)?;
        let src = self.val(ia);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let x = src.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let q: f64 = (0..len).map(|j| x[at(j)].powi(2)).sum();
                let factor = squash_factor(q);
                for j in 0..len {
                    out[at(j)] = factor * x[at(j)];
                }
            }
        }
        let t = Tensor::from_parts(src.shape().to_vec(), out);
        self.push("squash", t, Op::Squash(ia, axis), &[ia])
    }

    /// Maximum along `axis` (extent kept as 1). Gradient flows to the first
    /// maximal entry; the chosen indices are recorded in the trace.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis("max", ia, axis)?;
        let src = Arc::clone(&self.nodes[ia].value);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        let x = src.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut picks = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let best = (0..len).fold(0, |b, j| if x[at(j)] > x[at(b)] { j } else { b });
                out.push(x[at(best)]);
                picks.push(at(best));
                self.trace.push(best as u64);
            }
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = 1;
        self.push("max", Tensor::from_parts(shape, out), Op::Max(ia, picks), &[ia])
    }

    // ----- structural ops -----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let ids = parts.iter().map(|&p| self.index(p)).collect::<Result<Vec<_>>>()?;
        self.check_axis("concat", ids[0], axis)?;
        let first = self.val(ids[0]).shape().to_vec();
        for &id in &ids[1..] {
            let s = self.val(id).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{first:?} and {s:?} differ off axis {axis}"),
                ));
            }
        }
        let total: usize = ids.iter().map(|&id| self.val(id).shape()[axis]).sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in &ids {
                let t = self.val(id);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat(ids.clone(), axis), &ids)
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ia = self.index(a)?;
        self.check_axis("slice", ia, axis)?;
        let src = self.val(ia);
        let (outer, len, inner) = axis_split(src.shape(), axis);
        if start >= end || end > len {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} invalid for extent {len}"),
            ));
        }
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&src.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = end - start;
        let op = Op::Slice {
            input: ia,
            axis,
            start,
        };
        self.push("slice", Tensor::from_parts(shape, out), op, &[ia])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.index(a)?;
        let src = self.val(ia);
        if shape.iter().product::<usize>() != src.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} to {:?}", src.shape(), shape),
            ));
        }
        let t = Tensor::from_parts(shape.to_vec(), src.data().to_vec());
        self.push("reshape", t, Op::Reshape(ia), &[ia])
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let src = self.val(ia);
        if src.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank-2 input required, got {:?}", src.shape())));
        }
        let (r, c) = (src.shape()[0], src.shape()[1]);
        let out = transpose_raw(src.data(), r, c);
        self.push("transpose", Tensor::from_parts(vec![c, r], out), Op::Transpose(ia), &[ia])
    }

    /// Selects rows of a rank-2 table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let it = self.index(table)?;
        let src = self.val(it);
        if src.rank() != 2 || rows.is_empty() {
            return Err(Error::shape("gather_rows", format!("table {:?}, {} rows", src.shape(), rows.len())));
        }
        let (n, cols) = (src.shape()[0], src.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of range for {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(src.row(r));
        }
        let t = Tensor::from_parts(vec![rows.len(), cols], out);
        self.push("gather_rows", t, Op::GatherRows(it, rows.to_vec()), &[it])
    }

    // ----- reverse pass -----

    /// Reverse pass from a one-element `root`. Returns d(root)/d(leaf) for
    /// every leaf that requires a gradient; contributions over fan-out are
    /// summed.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.index(root)?;
        if self.val(r).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.val(r).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[r] = Some(vec![1.0]);

        for id in (0..=r).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.val(*a), self.val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.nodes[*a].requires_grad {
                        let bt = transpose_raw(tb.data(), k, n);
                        self.accumulate(&mut grads, *a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if self.nodes[*b].requires_grad {
                        let at = transpose_raw(ta.data(), m, k);
                        self.accumulate(&mut grads, *b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *b, g.clone());
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (self.val(*a).data(), self.val(*b).data());
                    self.accumulate(&mut grads, *a, zip_with(&g, xb, |g, x| g * x));
                    self.accumulate(&mut grads, *b, zip_with(&g, xa, |g, x| g * x));
                }
                Op::Broadcast(a) => {
                    let src = self.val(*a);
                    let map = broadcast_map(src.shape(), node.value.shape()).expect("checked in forward");
                    let mut ga = vec![0.0; src.numel()];
                    for (o, &i) in map.iter().enumerate() {
                        ga[i] += g[o];
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, k) => self.accumulate(&mut grads, *a, g.iter().map(|v| v * k).collect()),
                Op::AddScalar(a) => self.accumulate(&mut grads, *a, g),
                Op::Tanh(a) => self.accumulate(&mut grads, *a, zip_with(&g, y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => self.accumulate(&mut grads, *a, zip_with(&g, y, |g, y| g * y * (1.0 - y))),
                Op::Log(a) => {
                    let x = self.val(*a).data();
                    self.accumulate(&mut grads, *a, zip_with(&g, x, |g, x| g / x));
                }
                Op::Exp(a) => self.accumulate(&mut grads, *a, zip_with(&g, y, |g, y| g * y)),
                Op::Powf(a, p) => {
                    let x = self.val(*a).data();
                    let p = *p;
                    let ga = zip_with(&g, x, |g, x| if p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) });
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, low, high) => {
                    let x = self.val(*a).data();
                    let (low, high) = (*low, *high);
                    let ga = zip_with(&g, x, |g, x| if x >= low && x <= high { g } else { 0.0 });
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a, axis) => {
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut ga = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                ga[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a, axis) | Op::Mean(a, axis) => {
                    let src = self.val(*a);
                    let (outer, len, inner) = axis_split(src.shape(), *axis);
                    let k = if matches!(node.op, Op::Mean(..)) { 1.0 / len as f64 } else { 1.0 };
                    let mut ga = vec![0.0; src.numel()];
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                ga[o * len * inner + j * inner + i] = g[o * inner + i] * k;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let n = self.val(*a).numel();
                    self.accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::L2Norm(a, axis) => {
                    let src = self.val(*a);
                    let (outer, len, inner) = axis_split(src.shape(), *axis);
                    let x = src.data();
                    let mut ga = vec![0.0; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let norm = y[o * inner + i];
                            if norm == 0.0 {
                                continue;
                            }
                            for j in 0..len {
                                let at = o * len * inner + j * inner + i;
                                ga[at] = g[o * inner + i] * x[at] / norm;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Squash(a, axis) => {
                    let src = self.val(*a);
                    let (outer, len, inner) = axis_split(src.shape(), *axis);
                    let x = src.data();
                    let mut ga = vec![0.0; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let q: f64 = (0..len).map(|j| x[at(j)].powi(2)).sum();
                            let factor = squash_factor(q);
                            // d/ds [f(q) s] = f I + 2 f'(q) s s^T
                            let radial = if q > 0.0 {
                                (1.0 - q) / (q.sqrt() * (1.0 + q).powi(2))
                            } else {
                                0.0
                            };
                            let dot: f64 = (0..len).map(|j| g[at(j)] * x[at(j)]).sum();
                            for j in 0..len {
                                ga[at(j)] = factor * g[at(j)] + radial * dot * x[at(j)];
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Max(a, picks) => {
                    let mut ga = vec![0.0; self.val(*a).numel()];
                    for (o, &p) in picks.iter().enumerate() {
                        ga[p] += g[o];
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Concat(ids, axis) => {
                    let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &id in ids {
                        let width = self.val(id).shape()[*axis];
                        let mut part = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            part.extend_from_slice(&g[base..base + width * inner]);
                        }
                        offset += width;
                        self.accumulate(&mut grads, id, part);
                    }
                }
                Op::Slice { input, axis, start } => {
                    let src = self.val(*input);
                    let (outer, len, inner) = axis_split(src.shape(), *axis);
                    let width = node.value.shape()[*axis];
                    let mut ga = vec![0.0; src.numel()];
                    for o in 0..outer {
                        let dst = o * len * inner + start * inner;
                        let from = o * width * inner;
                        ga[dst..dst + width * inner].copy_from_slice(&g[from..from + width * inner]);
                    }
                    self.accumulate(&mut grads, *input, ga);
                }
                Op::Reshape(a) => self.accumulate(&mut grads, *a, g),
                Op::Transpose(a) => {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    self.accumulate(&mut grads, *a, transpose_raw(&g, r, c));
                }
                Op::GatherRows(table, rows) => {
                    let src = self.val(*table);
                    let cols = src.shape()[1];
                    let mut ga = vec![0.0; src.numel()];
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            ga[r * cols + c] += g[k * cols + c];
                        }
                    }
                    self.accumulate(&mut grads, *table, ga);
                }
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads: leaves,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: usize, contribution: Vec<f64>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Gradients of a scalar root with respect to the leaves of one graph.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the leaf does not require one or the
    /// root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scale applied to a vector with squared norm `q` by squashing.
pub(crate) fn squash_factor(q: f64) -> f64 {
    q.sqrt() / (1.0 + q)
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// For each flat index of `to`, the flat index of `from` it reads.
fn broadcast_map(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    if from.len() != to.len() || from.iter().zip(to).any(|(&f, &t)| f != 1 && f != t) {
        return None;
    }
    let numel: usize = to.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut index = vec![0usize; to.len()];
    for _ in 0..numel {
        let src = index
            .iter()
            .zip(from)
            .fold(0, |acc, (&i, &f)| acc * f + if f == 1 { 0 } else { i });
        map.push(src);
        for d in (0..to.len()).rev() {
            index[d] += 1;
            if index[d] < to[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Some(map)
}
