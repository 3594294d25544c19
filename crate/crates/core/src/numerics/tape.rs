//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every kernel applied to [`Var`] handles during the
//! forward pass. [`Tape::backward`] replays the records in reverse and
//! returns the gradient of a scalar output with respect to every node that
//! transitively depends on a `requires_grad` leaf. The tape is rebuilt for
//! each training step.

use std::cell::{Cell, Ref, RefCell};

use super::{gemm, NumericsError, Tensor};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Block { src: usize, r0: usize, c0: usize },
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax(usize),
    LogSoftmax(usize),
    Gelu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Attention { q: usize, k: usize, v: usize, probs: Vec<f64>, scale: f64 },
    GatherRows { src: usize, idx: Vec<usize> },
    Gather { src: usize, idx: Vec<usize> },
    L2NormalizeRows { src: usize, norms: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Block { .. } => "block",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Gelu(..) => "gelu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Attention { .. } => "attention",
            Op::GatherRows { .. } => "gather_rows",
            Op::Gather { .. } => "gather",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    non_finite: Cell<Option<&'static str>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of a node, or `None` when no gradient reached it.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[var.id].clone(), g.clone()))
    }

    /// Gradient of a node, zeros when the node did not participate.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(256)), non_finite: Cell::new(None) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Name of the first kernel that produced a non-finite value, if any.
    pub fn non_finite_origin(&self) -> Option<&'static str> {
        self.non_finite.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        if self.non_finite.get().is_none() && !value.is_finite() {
            self.non_finite.set(Some(op.name()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Grads, NumericsError> {
        let shape = output.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NonScalarOutput(shape));
        }
        self.backward_seeded(&[(output, Tensor::from_parts(shape, vec![1.0]))])
    }

    /// Backpropagates from several nodes at once, each seeded with an
    /// explicit upstream gradient. The result is the gradient of
    /// `sum_i <seed_i, node_i>`.
    pub fn backward_seeded(&self, seeds: &[(Var<'_>, Tensor)]) -> Result<Grads, NumericsError> {
        if let Some(op) = self.non_finite.get() {
            return Err(NumericsError::NonFinite { op });
        }
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        for (var, seed) in seeds {
            if seed.shape() != nodes[var.id].value.shape() {
                return Err(NumericsError::Shape(format!(
                    "seed shape {:?} does not match node shape {:?}",
                    seed.shape(),
                    nodes[var.id].value.shape()
                )));
            }
            if nodes[var.id].requires_grad {
                accumulate(&mut grads, var.id, seed.data());
            }
        }
        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: node.op.name() });
            }
            backward_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contrib: &[f64]) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn col_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let needs = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &i in [a, b] {
                if needs(i) {
                    accumulate(grads, i, g);
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g);
            }
            if needs(*b) {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let d: Vec<f64> = g.iter().zip(val(*b).data()).map(|(g, b)| g * b).collect();
                accumulate(grads, *a, &d);
            }
            if needs(*b) {
                let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, a)| g * a).collect();
                accumulate(grads, *b, &d);
            }
        }
        Op::AddRow(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g);
            }
            if needs(*b) {
                accumulate(grads, *b, &col_sums(g, out.cols()));
            }
        }
        Op::MulRow(a, b) => {
            let cols = out.cols();
            let bv = val(*b).data();
            if needs(*a) {
                let d: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * bv[i % cols]).collect();
                accumulate(grads, *a, &d);
            }
            if needs(*b) {
                let prod: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, a)| g * a).collect();
                accumulate(grads, *b, &col_sums(&prod, cols));
            }
        }
        Op::Scale(a, s) => {
            let d: Vec<f64> = g.iter().map(|v| v * s).collect();
            accumulate(grads, *a, &d);
        }
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, *a, g),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if needs(*a) {
                // dA = dC · Bᵀ
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, &mut d);
                accumulate(grads, *a, &d);
            }
            if needs(*b) {
                // dB = Aᵀ · dC
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, &mut d);
                accumulate(grads, *b, &d);
            }
        }
        Op::Transpose(a) => {
            let d = transpose_data(g, out.rows(), out.cols());
            accumulate(grads, *a, &d);
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &i in ids {
                let len = val(i).numel();
                if needs(i) {
                    accumulate(grads, i, &g[offset..offset + len]);
                }
                offset += len;
            }
        }
        Op::ConcatCols(ids) => {
            let rows = out.rows();
            let total = out.cols();
            let mut c0 = 0;
            for &i in ids {
                let c = val(i).cols();
                if needs(i) {
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + c0..r * total + c0 + c]);
                    }
                    accumulate(grads, i, &d);
                }
                c0 += c;
            }
        }
        Op::Block { src, r0, c0 } => {
            let sv = val(*src);
            let scols = sv.cols();
            let (nr, nc) = (out.rows(), out.cols());
            let mut d = vec![0.0; sv.numel()];
            for r in 0..nr {
                let dst = (r0 + r) * scols + c0;
                d[dst..dst + nc].copy_from_slice(&g[r * nc..(r + 1) * nc]);
            }
            accumulate(grads, *src, &d);
        }
        Op::Sum(a) => {
            let d = vec![g[0]; val(*a).numel()];
            accumulate(grads, *a, &d);
        }
        Op::Mean(a) => {
            let n = val(*a).numel();
            let d = vec![g[0] / n as f64; n];
            accumulate(grads, *a, &d);
        }
        Op::SumRows(a) => {
            let av = val(*a);
            let mut d = Vec::with_capacity(av.numel());
            for _ in 0..av.rows() {
                d.extend_from_slice(g);
            }
            accumulate(grads, *a, &d);
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let cols = out.cols();
            let gv = val(*gamma).data();
            if needs(*x) {
                let mut d = vec![0.0; g.len()];
                for (r, istd) in inv_std.iter().enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let xr = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for c in 0..cols {
                        let dxh = gr[c] * gv[c];
                        mean_dx += dxh;
                        mean_dx_x += dxh * xr[c];
                    }
                    mean_dx /= cols as f64;
                    mean_dx_x /= cols as f64;
                    for c in 0..cols {
                        let dxh = gr[c] * gv[c];
                        d[r * cols + c] = istd * (dxh - mean_dx - xr[c] * mean_dx_x);
                    }
                }
                accumulate(grads, *x, &d);
            }
            if needs(*gamma) {
                let prod: Vec<f64> = g.iter().zip(xhat).map(|(g, x)| g * x).collect();
                accumulate(grads, *gamma, &col_sums(&prod, cols));
            }
            if needs(*beta) {
                accumulate(grads, *beta, &col_sums(g, cols));
            }
        }
        Op::Softmax(a) => {
            let cols = out.cols();
            let y = out.data();
            let mut d = vec![0.0; g.len()];
            for r in 0..out.rows() {
                let s = r * cols..(r + 1) * cols;
                let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(g, y)| g * y).sum();
                for c in s {
                    d[c] = y[c] * (g[c] - dot);
                }
            }
            accumulate(grads, *a, &d);
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let y = out.data();
            let mut d = vec![0.0; g.len()];
            for r in 0..out.rows() {
                let s = r * cols..(r + 1) * cols;
                let gsum: f64 = g[s.clone()].iter().sum();
                for c in s {
                    d[c] = g[c] - y[c].exp() * gsum;
                }
            }
            accumulate(grads, *a, &d);
        }
        Op::Gelu(a) => {
            let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, &x)| g * gelu_grad(x)).collect();
            accumulate(grads, *a, &d);
        }
        Op::Tanh(a) => {
            let d: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(grads, *a, &d);
        }
        Op::Exp(a) => {
            let d: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
            accumulate(grads, *a, &d);
        }
        Op::Log(a) => {
            let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
            accumulate(grads, *a, &d);
        }
        Op::Square(a) => {
            let d: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, x)| 2.0 * g * x).collect();
            accumulate(grads, *a, &d);
        }
        Op::Attention { q, k, v, probs, scale } => {
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let (nq, dk) = (qv.rows(), qv.cols());
            let (nk, dv) = (kv.rows(), vv.cols());
            if needs(*v) {
                // dV = Pᵀ · dO
                let mut d = vec![0.0; nk * dv];
                gemm(nk, nq, dv, probs, 1, nk as isize, g, dv as isize, 1, &mut d);
                accumulate(grads, *v, &d);
            }
            if needs(*q) || needs(*k) {
                // dP = dO · Vᵀ ; dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
                let mut dp = vec![0.0; nq * nk];
                gemm(nq, dv, nk, g, dv as isize, 1, vv.data(), 1, dv as isize, &mut dp);
                for r in 0..nq {
                    let s = r * nk..(r + 1) * nk;
                    let dot: f64 = dp[s.clone()].iter().zip(&probs[s.clone()]).map(|(a, b)| a * b).sum();
                    for c in s {
                        dp[c] = probs[c] * (dp[c] - dot) * scale;
                    }
                }
                if needs(*q) {
                    let mut d = vec![0.0; nq * dk];
                    gemm(nq, nk, dk, &dp, nk as isize, 1, kv.data(), dk as isize, 1, &mut d);
                    accumulate(grads, *q, &d);
                }
                if needs(*k) {
                    let mut d = vec![0.0; nk * dk];
                    gemm(nk, nq, dk, &dp, 1, nk as isize, qv.data(), dk as isize, 1, &mut d);
                    accumulate(grads, *k, &d);
                }
            }
        }
        Op::GatherRows { src, idx } => {
            let sv = val(*src);
            let cols = sv.cols();
            let mut d = vec![0.0; sv.numel()];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..cols {
                    d[i * cols + c] += g[r * cols + c];
                }
            }
            accumulate(grads, *src, &d);
        }
        Op::Gather { src, idx } => {
            let mut d = vec![0.0; val(*src).numel()];
            for (j, &i) in idx.iter().enumerate() {
                d[i] += g[j];
            }
            accumulate(grads, *src, &d);
        }
        Op::L2NormalizeRows { src, norms } => {
            let cols = out.cols();
            let y = out.data();
            let mut d = vec![0.0; g.len()];
            for (r, n) in norms.iter().enumerate() {
                let s = r * cols..(r + 1) * cols;
                let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                for c in s {
                    d[c] = (g[c] - y[c] * dot) / n;
                }
            }
            accumulate(grads, *src, &d);
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.tape.rg(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn zip_with(self, other: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = self.tape.value(self.id);
        let b = self.tape.value(other.id);
        same_shape(name, &a, &b);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(a.shape().to_vec(), data)
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Tensor {
        self.tape.value(self.id).map(f)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = self.zip_with(other, "add", |a, b| a + b);
        self.binary(other, Op::Add(self.id, other.id), v)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = self.zip_with(other, "sub", |a, b| a - b);
        self.binary(other, Op::Sub(self.id, other.id), v)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = self.zip_with(other, "mul", |a, b| a * b);
        self.binary(other, Op::Mul(self.id, other.id), v)
    }

    fn row_broadcast(self, row: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = self.tape.value(self.id);
        let b = self.tape.value(row.id);
        let cols = a.cols();
        assert_eq!(b.numel(), cols, "{name}: row of {} elements against {cols} columns", b.numel());
        let bd = b.data();
        let data = a.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % cols])).collect();
        Tensor::from_parts(a.shape().to_vec(), data)
    }

    /// Adds a row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let v = self.row_broadcast(row, "add_row", |a, b| a + b);
        self.binary(row, Op::AddRow(self.id, row.id), v)
    }

    /// Multiplies every row elementwise by a row vector.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        let v = self.row_broadcast(row, "mul_row", |a, b| a * b);
        self.binary(row, Op::MulRow(self.id, row.id), v)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.map(|x| x * s);
        self.unary(Op::Scale(self.id, s), v)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.map(|x| x + s);
        self.unary(Op::AddScalar(self.id), v)
    }

    /// Matrix product of `[m, k]` by `[k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let (m, k) = (a.rows(), a.cols());
            assert_eq!(b.shape().len(), 2, "matmul: right operand must be 2-D, got {:?}", b.shape());
            assert_eq!(b.shape()[0], k, "matmul: {:?} x {:?}", a.shape(), b.shape());
            let n = b.cols();
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, &mut out);
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::from_parts(shape, out)
        };
        self.binary(other, Op::MatMul(self.id, other.id), value)
    }

    /// Transpose of a 2-D view.
    pub fn t(self) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            let (r, c) = (a.rows(), a.cols());
            Tensor::from_parts(vec![c, r], transpose_data(a.data(), r, c))
        };
        self.unary(Op::Transpose(self.id), value)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'t> {
        let value = self.tape.value(self.id).reshape(shape).expect("reshape: element count changed");
        self.unary(Op::Reshape(self.id), value)
    }

    /// Stacks 2-D views vertically.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let tape = parts[0].tape;
        let value = {
            let cols = tape.value(parts[0].id).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let v = tape.value(p.id);
                assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        tape.push(value, Op::ConcatRows(ids), rg)
    }

    /// Joins 2-D views side by side.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let tape = parts[0].tape;
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| tape.value(p.id)).collect();
            let rows = vals[0].rows();
            assert!(vals.iter().all(|v| v.rows() == rows), "concat_cols: row mismatch");
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::from_parts(vec![rows, total], data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        tape.push(value, Op::ConcatCols(ids), rg)
    }

    /// Rectangular sub-block `[r0..r0+nr, c0..c0+nc]` of a 2-D view.
    pub fn block(self, r0: usize, nr: usize, c0: usize, nc: usize) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            let cols = a.cols();
            assert!(r0 + nr <= a.rows() && c0 + nc <= cols, "block out of range for {:?}", a.shape());
            let mut data = Vec::with_capacity(nr * nc);
            for r in r0..r0 + nr {
                data.extend_from_slice(&a.data()[r * cols + c0..r * cols + c0 + nc]);
            }
            Tensor::from_parts(vec![nr, nc], data)
        };
        self.unary(Op::Block { src: self.id, r0, c0 }, value)
    }

    pub fn slice_rows(self, r0: usize, nr: usize) -> Var<'t> {
        let cols = self.tape.value(self.id).cols();
        self.block(r0, nr, 0, cols)
    }

    pub fn slice_cols(self, c0: usize, nc: usize) -> Var<'t> {
        let rows = self.tape.value(self.id).rows();
        self.block(0, rows, c0, nc)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.tape.value(self.id).sum());
        self.unary(Op::Sum(self.id), v)
    }

    pub fn mean(self) -> Var<'t> {
        let v = Tensor::scalar(self.tape.value(self.id).mean());
        self.unary(Op::Mean(self.id), v)
    }

    /// Column-wise sum over all rows, shape `[cols]`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = {
            let a = self.tape.value(self.id);
            Tensor::vector(col_sums(a.data(), a.cols()))
        };
        self.unary(Op::SumRows(self.id), v)
    }

    pub fn mean_rows(self) -> Var<'t> {
        let rows = self.tape.value(self.id).rows();
        self.sum_rows().scale(1.0 / rows as f64)
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Var<'t> {
        let (value, xhat, inv_std) = {
            let x = self.tape.value(self.id);
            let (g, b) = (self.tape.value(gamma.id), self.tape.value(beta.id));
            let cols = x.cols();
            assert!(g.numel() == cols && b.numel() == cols, "layer_norm: affine size mismatch");
            let mut xhat = Vec::with_capacity(x.numel());
            let mut inv_std = Vec::with_capacity(x.rows());
            let mut out = Vec::with_capacity(x.numel());
            for row in x.data().chunks_exact(cols) {
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let istd = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(istd);
                for (c, v) in row.iter().enumerate() {
                    let h = (v - mean) * istd;
                    xhat.push(h);
                    out.push(h * g.data()[c] + b.data()[c]);
                }
            }
            (Tensor::from_parts(x.shape().to_vec(), out), xhat, inv_std)
        };
        let rg = self.tape.rg(&[self.id, gamma.id, beta.id]);
        self.tape.push(value, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std }, rg)
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Var<'t> {
        let v = {
            let a = self.tape.value(self.id);
            let mut out = a.data().to_vec();
            for row in out.chunks_exact_mut(a.cols()) {
                softmax_in_place(row);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        self.unary(Op::Softmax(self.id), v)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(self) -> Var<'t> {
        let v = {
            let a = self.tape.value(self.id);
            let mut out = a.data().to_vec();
            for row in out.chunks_exact_mut(a.cols()) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        self.unary(Op::LogSoftmax(self.id), v)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        let v = self.map(gelu);
        self.unary(Op::Gelu(self.id), v)
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.map(f64::tanh);
        self.unary(Op::Tanh(self.id), v)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.map(f64::ln);
        self.unary(Op::Log(self.id), v)
    }

    pub fn square(self) -> Var<'t> {
        let v = self.map(|x| x * x);
        self.unary(Op::Square(self.id), v)
    }

    /// Scaled dot-product attention `softmax(q kᵀ / sqrt(d)) v` for one head.
    pub fn attention(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Var<'t> {
        let tape = q.tape;
        let (value, probs, scale) = {
            let (qv, kv, vv) = (tape.value(q.id), tape.value(k.id), tape.value(v.id));
            let (nq, dk) = (qv.rows(), qv.cols());
            let (nk, dv) = (kv.rows(), vv.cols());
            assert_eq!(kv.cols(), dk, "attention: key width");
            assert_eq!(vv.rows(), nk, "attention: value length");
            let scale = 1.0 / (dk as f64).sqrt();
            let mut probs = vec![0.0; nq * nk];
            gemm(nq, dk, nk, qv.data(), dk as isize, 1, kv.data(), 1, dk as isize, &mut probs);
            for row in probs.chunks_exact_mut(nk) {
                row.iter_mut().for_each(|v| *v *= scale);
                softmax_in_place(row);
            }
            let mut out = vec![0.0; nq * dv];
            gemm(nq, nk, dv, &probs, nk as isize, 1, vv.data(), dv as isize, 1, &mut out);
            (Tensor::from_parts(vec![nq, dv], out), probs, scale)
        };
        let rg = tape.rg(&[q.id, k.id, v.id]);
        tape.push(value, Op::Attention { q: q.id, k: k.id, v: v.id, probs, scale }, rg)
    }

    /// Rows of `self` selected by `idx` (embedding lookup).
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            let cols = a.cols();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                assert!(i < a.rows(), "gather_rows: index {i} out of {} rows", a.rows());
                data.extend_from_slice(a.row(i));
            }
            Tensor::from_parts(vec![idx.len(), cols], data)
        };
        self.unary(Op::GatherRows { src: self.id, idx: idx.to_vec() }, value)
    }

    /// Flat elements selected by `idx`, shape `[idx.len()]`.
    pub fn gather(self, idx: &[usize]) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            Tensor::vector(idx.iter().map(|&i| a.data()[i]).collect())
        };
        self.unary(Op::Gather { src: self.id, idx: idx.to_vec() }, value)
    }

    /// Each row divided by its Euclidean norm.
    pub fn l2_normalize_rows(self) -> Var<'t> {
        let (value, norms) = {
            let a = self.tape.value(self.id);
            let cols = a.cols();
            let mut norms = Vec::with_capacity(a.rows());
            let mut out = Vec::with_capacity(a.numel());
            for row in a.data().chunks_exact(cols) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(n);
                out.extend(row.iter().map(|v| v / n));
            }
            (Tensor::from_parts(a.shape().to_vec(), out), norms)
        };
        self.unary(Op::L2NormalizeRows { src: self.id, norms }, value)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let g = tape.backward(x.sum()).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(gx.shape(), &[2, 3, 2]);
        assert!(gx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.square()), Err(NumericsError::NonScalarOutput(_))));
    }

    #[test]
    fn non_participating_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let g = tape.backward(x.square().sum()).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn nan_names_originating_kernel() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
        let y = x.ln().sum();
        match tape.backward(y) {
            Err(NumericsError::NonFinite { op }) => assert_eq!(op, "log"),
            other => panic!("expected non-finite error, got {:?}", other.err()),
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.param(Tensor::scalar(2.0));
        let g = tape.backward(c.mul(x).sum()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn seeded_backward_matches_weighted_sum() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = x.square();
        let g = tape.backward_seeded(&[(y, Tensor::vector(vec![3.0, -1.0]))]).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -4.0]);
    }
}
