//! Eager computation graph with a reverse-mode backward pass.
//!
//! Nodes are appended to an arena in creation order, so the arena order is a
//! topological order and `backward` simply walks it in reverse. Gradients
//! accumulate by addition; every call to [`Graph::backward`] starts from zero.
//!
//! Shape rules (all tensors are rank 2):
//!
//! | op | inputs | output |
//! |----|--------|--------|
//! | `matmul` | `[m,k]`, `[k,n]` | `[m,n]` |
//! | `add` / `sub` / `mul` | `[r1,c1]`, `[r2,c2]` with each dim equal or 1 | broadcast shape |
//! | `concat` | `[m,c_i]...` | `[m, Σc_i]` |
//! | `slice` | `[m,c]`, `start..end` | `[m, end-start]` |
//! | `softmax` | `[m,c]` | `[m,c]`, row-wise |
//! | `logsumexp` | `[m,c]` | `[m,1]` |
//! | `mean_axis` / `sum_axis` | `[m,c]`, axis | `[1,c]` (axis 0) or `[m,1]` (axis 1) |
//! | `gather` | table `[v,e]`, ids | `[len(ids), e]` |
//! | `pick_cols` | `[m,c]`, `m x w` column indices | `[m,w]` |

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Concat,
    Slice,
    Sigmoid,
    Relu,
    Softmax,
    LogSumExp,
    MeanAxis,
    SumAxis,
    Powf,
    Gather,
    PickCols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LogSumExp(Var),
    MeanAxis(Var, usize),
    SumAxis(Var, usize),
    Powf(Var, f64),
    Gather { table: Var, ids: Vec<usize> },
    PickCols { input: Var, idx: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSumExp(_) => OpKind::LogSumExp,
            Op::MeanAxis(..) => OpKind::MeanAxis,
            Op::SumAxis(..) => OpKind::SumAxis,
            Op::Powf(..) => OpKind::Powf,
            Op::Gather { .. } => OpKind::Gather,
            Op::PickCols { .. } => OpKind::PickCols,
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients of a scalar root with respect to every node of the graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; nodes the root does not depend on get zeros.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

fn bcast_dim(op: &'static str, a: &[usize], b: &[usize], i: usize) -> Result<usize> {
    match (a[i], b[i]) {
        (x, y) if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        _ => Err(Error::shape(op, a, b)),
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that checks every op output for NaN/Inf.
    pub fn with_finite_checks() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: true,
        }
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!("{:?}", op.kind())));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.expect_rank2(op)
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf".into()));
        }
        value.expect_rank2("leaf")?;
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], data))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "transpose")?;
        let data = transpose_raw(self.value(a).data(), m, n);
        self.push(Op::Transpose(a), Tensor::from_parts(vec![n, m], data))
    }

    fn broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ra, ca) = self.dims(a, op)?;
        let (rb, cb) = self.dims(b, op)?;
        let sa = [ra, ca];
        let sb = [rb, cb];
        let rows = bcast_dim(op, &sa, &sb, 0)?;
        let cols = bcast_dim(op, &sa, &sb, 1)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let ia = if ra == 1 { 0 } else { i };
            let ib = if rb == 1 { 0 } else { i };
            for j in 0..cols {
                let ja = if ca == 1 { 0 } else { j };
                let jb = if cb == 1 { 0 } else { j };
                out.push(f(av[ia * ca + ja], bv[ib * cb + jb]));
            }
        }
        Ok(Tensor::from_parts(vec![rows, cols], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), t)
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect());
        self.push(Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x + c).collect());
        self.push(Op::AddScalar(a), t)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Tensor("concat of zero tensors".into()))?;
        let (rows, _) = self.dims(first, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat")?;
            if r != rows {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Op::Concat(parts.to_vec()),
            Tensor::from_parts(vec![rows, total], out),
        )
    }

    /// Columns `start..end` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "slice")?;
        if start >= end || end > cols {
            return Err(Error::shape("slice", self.shape(a), &[start, end]));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * w);
        for i in 0..rows {
            out.extend_from_slice(&src[i * cols + start..i * cols + end]);
        }
        self.push(
            Op::Slice { input: a, start },
            Tensor::from_parts(vec![rows, w], out),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|&x| sigmoid(x)).collect(),
        );
        self.push(Op::Sigmoid(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x.max(0.0)).collect(),
        );
        self.push(Op::Relu(a), t)
    }

    /// Row-wise softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "softmax")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                *o = (x - m).exp();
                z += *o;
            }
            for o in &mut out[i * cols..(i + 1) * cols] {
                *o /= z;
            }
        }
        self.push(Op::Softmax(a), Tensor::from_parts(vec![rows, cols], out))
    }

    /// Row-wise `log Σ exp`, producing a `[m,1]` column.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "logsumexp")?;
        let src = self.value(a).data();
        let out = (0..rows)
            .map(|i| logsumexp_row(&src[i * cols..(i + 1) * cols]))
            .collect();
        self.push(Op::LogSumExp(a), Tensor::from_parts(vec![rows, 1], out))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.reduce(a, axis, "sum_axis")?;
        self.push(Op::SumAxis(a, axis), t)
    }

    /// Mean pooling along `axis`, keeping the reduced dimension as size 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let mut t = self.reduce(a, axis, "mean_axis")?;
        let n = self.value(a).shape()[axis] as f64;
        for v in t.data_mut() {
            *v /= n;
        }
        self.push(Op::MeanAxis(a, axis), t)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.sum_axis(a, 1)?;
        self.sum_axis(s, 0)
    }

    fn reduce(&self, a: Var, axis: usize, op: &'static str) -> Result<Tensor> {
        let (rows, cols) = self.dims(a, op)?;
        let src = self.value(a).data();
        match axis {
            0 => {
                let mut out = vec![0.0; cols];
                for i in 0..rows {
                    for (o, &x) in out.iter_mut().zip(&src[i * cols..(i + 1) * cols]) {
                        *o += x;
                    }
                }
                Ok(Tensor::from_parts(vec![1, cols], out))
            }
            1 => {
                let out = (0..rows)
                    .map(|i| src[i * cols..(i + 1) * cols].iter().sum())
                    .collect();
                Ok(Tensor::from_parts(vec![rows, 1], out))
            }
            _ => Err(Error::shape(op, &[rows, cols], &[axis])),
        }
    }

    /// Elementwise `x^p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().map(|x| x.powf(p)).collect(),
        );
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("powf({p})")));
        }
        self.push(Op::Powf(a, p), t)
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims(table, "gather")?;
        if ids.is_empty() {
            return Err(Error::Tensor("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("gather", &[vocab, dim], &[bad]));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Tensor::from_parts(vec![ids.len(), dim], out),
        )
    }

    /// Per-row column selection: output `[i, j] = a[i, idx[i*w + j]]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize], width: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "pick_cols")?;
        if width == 0 || idx.len() != rows * width || idx.iter().any(|&c| c >= cols) {
            return Err(Error::shape(
                "pick_cols",
                &[rows, cols],
                &[idx.len(), width],
            ));
        }
        let src = self.value(a).data();
        let out = idx
            .iter()
            .enumerate()
            .map(|(k, &c)| src[(k / width) * cols + c])
            .collect();
        self.push(
            Op::PickCols {
                input: a,
                idx: idx.to_vec(),
            },
            Tensor::from_parts(vec![rows, width], out),
        )
    }

    /// Reverse pass from a `[1,1]` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rs = self.shape(root);
        if rs != [1, 1] {
            return Err(Error::NonScalarRoot {
                op: "backward",
                shape: rs.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(&[1, 1]));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                let bt = transpose_raw(bv.data(), k, n);
                let ga = matmul_raw(g.data(), &bt, m, n, k);
                accumulate(grads, *a, av.shape(), &ga);
                let at = transpose_raw(av.data(), m, k);
                let gb = matmul_raw(&at, g.data(), k, m, n);
                accumulate(grads, *b, bv.shape(), &gb);
            }
            Op::Transpose(a) => {
                let gt = transpose_raw(g.data(), g.rows(), g.cols());
                accumulate(grads, *a, self.shape(*a), &gt);
            }
            Op::Add(a, b) => {
                self.unbroadcast(grads, *a, g, |_, _| 1.0, *b);
                self.unbroadcast(grads, *b, g, |_, _| 1.0, *a);
            }
            Op::Sub(a, b) => {
                self.unbroadcast(grads, *a, g, |_, _| 1.0, *b);
                self.unbroadcast(grads, *b, g, |_, _| -1.0, *a);
            }
            Op::Mul(a, b) => {
                // d(a*b)/da = b, looked up at the broadcast position.
                self.unbroadcast(grads, *a, g, |_, other| other, *b);
                self.unbroadcast(grads, *b, g, |_, other| other, *a);
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.data().iter().map(|x| x * c).collect();
                accumulate(grads, *a, y.shape(), &d);
            }
            Op::AddScalar(a) => accumulate(grads, *a, y.shape(), g.data()),
            Op::Concat(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, self.shape(p), &d);
                    offset += w;
                }
            }
            Op::Slice { input, start } => {
                let (rows, cols) = (self.value(*input).rows(), self.value(*input).cols());
                let w = y.cols();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                accumulate(grads, *input, &[rows, cols], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, s)| gv * s * (1.0 - s))
                    .collect();
                accumulate(grads, *a, y.shape(), &d);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, y.shape(), &d);
            }
            Op::Softmax(a) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, y.shape(), &d);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let (rows, cols) = (x.rows(), x.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let lse = y.data()[r];
                    for c in 0..cols {
                        d[r * cols + c] = g.data()[r] * (x.get(r, c) - lse).exp();
                    }
                }
                accumulate(grads, *a, x.shape(), &d);
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let x = self.value(*a);
                let (rows, cols) = (x.rows(), x.cols());
                let scale = match node.op {
                    Op::MeanAxis(..) => 1.0 / x.shape()[*axis] as f64,
                    _ => 1.0,
                };
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = if *axis == 0 { g.data()[c] } else { g.data()[r] };
                        d[r * cols + c] = gv * scale;
                    }
                }
                accumulate(grads, *a, x.shape(), &d);
            }
            Op::Powf(a, p) => {
                let x = self.value(*a).data();
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| gv * p * xv.powf(p - 1.0))
                    .collect();
                accumulate(grads, *a, y.shape(), &d);
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let dim = t.cols();
                let slot = grads[table.0].get_or_insert_with(|| Tensor::zeros(t.shape()));
                let dst = slot.data_mut();
                for (k, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        dst[id * dim + c] += g.data()[k * dim + c];
                    }
                }
            }
            Op::PickCols { input, idx } => {
                let x = self.value(*input);
                let cols = x.cols();
                let w = y.cols();
                let slot = grads[input.0].get_or_insert_with(|| Tensor::zeros(x.shape()));
                let dst = slot.data_mut();
                for (k, &c) in idx.iter().enumerate() {
                    dst[(k / w) * cols + c] += g.data()[k];
                }
            }
        }
    }

    /// Accumulates `g * f(self_val, other_val)` into `target`, summing over
    /// any dimension that `target` broadcast along.
    fn unbroadcast(
        &self,
        grads: &mut [Option<Tensor>],
        target: Var,
        g: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        other: Var,
    ) {
        let t = self.value(target);
        let o = self.value(other);
        let (rt, ct) = (t.rows(), t.cols());
        let (ro, co) = (o.rows(), o.cols());
        let (rows, cols) = (g.rows(), g.cols());
        let mut d = vec![0.0; rt * ct];
        for i in 0..rows {
            let it = if rt == 1 { 0 } else { i };
            let io = if ro == 1 { 0 } else { i };
            for j in 0..cols {
                let jt = if ct == 1 { 0 } else { j };
                let jo = if co == 1 { 0 } else { j };
                let tv = t.data()[it * ct + jt];
                let ov = o.data()[io * co + jo];
                d[it * ct + jt] += g.data()[i * cols + j] * f(tv, ov);
            }
        }
        accumulate(grads, target, t.shape(), &d);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: &[f64]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta.to_vec())),
    }
}

pub(crate) fn logsumexp_row(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
