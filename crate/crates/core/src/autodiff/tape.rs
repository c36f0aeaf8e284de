//! The differentiation tape: tensors, primitives, and the backward pass.

use std::ops::Range;

use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Provenance of a tensor: the primitive that produced it and its parents.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    Log(Var),
    RowMaxPool { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    Slice { x: Var, rows: Range<usize>, cols: Range<usize> },
    Sum(Var),
    Mean(Var),
    ScalarMul { x: Var, k: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Gradients keyed by tape variable, as produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` required one and
    /// participated in the computation.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A single-threaded record of tensor operations supporting reverse-mode
/// differentiation. Creation order is topological order, so the backward
/// pass is a reverse scan with additive gradient accumulation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Number of recorded tensors.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row count of a tensor.
    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    /// Column count of a tensor.
    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    /// Raw row-major values of a tensor.
    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            values,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable input tensor.
    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "leaf {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(self.push(rows, cols, values, true, Op::Leaf))
    }

    /// Records a non-trainable input tensor.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "constant {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(self.push(rows, cols, values, false, Op::Constant))
    }

    /// Convenience all-ones constant (used to broadcast via matmul).
    pub fn ones(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![1.0; rows * cols], false, Op::Constant)
    }

    /// Convenience all-zeros constant.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], false, Op::Constant)
    }

    /// Matrix product `(m×k)·(k×n) → m×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = (self.rows(a), self.cols(a));
        let (kb, n) = (self.rows(b), self.cols(b));
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {m}x{ka} vs {kb}x{n}"
            )));
        }
        let values = mat_mul(self.values(a), self.values(b), m, ka, n);
        let grad = self.needs_grad(&[a, b]);
        Ok(self.push(m, n, values, grad, Op::Matmul(a, b)))
    }

    /// Elementwise sum of two identically shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shape_check("add", a, b)?;
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let grad = self.needs_grad(&[a, b]);
        Ok(self.push(self.rows(a), self.cols(a), values, grad, Op::Add(a, b)))
    }

    /// Elementwise difference of two identically shaped tensors.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shape_check("sub", a, b)?;
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        let grad = self.needs_grad(&[a, b]);
        Ok(self.push(self.rows(a), self.cols(a), values, grad, Op::Sub(a, b)))
    }

    /// Hadamard product of two identically shaped tensors.
    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shape_check("mul_elementwise", a, b)?;
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let grad = self.needs_grad(&[a, b]);
        Ok(self.push(self.rows(a), self.cols(a), values, grad, Op::MulElem(a, b)))
    }

    fn zip_shape_check(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.rows(a) != self.rows(b) || self.cols(a) != self.cols(b) {
            return Err(Error::Shape(format!(
                "{op} needs matching shapes, got {}x{} vs {}x{}",
                self.rows(a),
                self.cols(a),
                self.rows(b),
                self.cols(b)
            )));
        }
        Ok(())
    }

    /// Concatenates tensors along `axis` (0 = stack rows, 1 = widen columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat needs at least one input".into()));
        };
        match axis {
            0 => {
                let cols = self.cols(first);
                let mut rows = 0;
                let mut values = Vec::new();
                for &p in parts {
                    if self.cols(p) != cols {
                        return Err(Error::Shape(format!(
                            "concat axis 0 needs equal column counts, got {} and {cols}",
                            self.cols(p)
                        )));
                    }
                    rows += self.rows(p);
                    values.extend_from_slice(self.values(p));
                }
                let grad = self.needs_grad(parts);
                Ok(self.push(
                    rows,
                    cols,
                    values,
                    grad,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                ))
            }
            1 => {
                let rows = self.rows(first);
                let mut cols = 0;
                for &p in parts {
                    if self.rows(p) != rows {
                        return Err(Error::Shape(format!(
                            "concat axis 1 needs equal row counts, got {} and {rows}",
                            self.rows(p)
                        )));
                    }
                    cols += self.cols(p);
                }
                let mut values = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        let c = self.cols(p);
                        values.extend_from_slice(&self.values(p)[r * c..(r + 1) * c]);
                    }
                }
                let grad = self.needs_grad(parts);
                Ok(self.push(
                    rows,
                    cols,
                    values,
                    grad,
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis,
                    },
                ))
            }
            _ => Err(Error::Shape(format!("concat axis must be 0 or 1, got {axis}"))),
        }
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v.tanh()).collect();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(self.rows(x), self.cols(x), values, grad, Op::Tanh(x)))
    }

    /// Elementwise logistic sigmoid.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(self.rows(x), self.cols(x), values, grad, Op::Sigmoid(x)))
    }

    /// Elementwise rectifier.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v.max(0.0)).collect();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(self.rows(x), self.cols(x), values, grad, Op::Relu(x)))
    }

    /// Softmax along `axis` (1 = each row, 0 = each column), computed with
    /// the usual max-shift for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if axis > 1 {
            return Err(Error::Shape(format!("softmax axis must be 0 or 1, got {axis}")));
        }
        let xv = self.values(x);
        let mut values = vec![0.0; rows * cols];
        let (outer, inner, outer_stride, inner_stride) = if axis == 1 {
            (rows, cols, cols, 1)
        } else {
            (cols, rows, 1, cols)
        };
        for o in 0..outer {
            let idx = |i: usize| o * outer_stride + i * inner_stride;
            let mut max = f64::NEG_INFINITY;
            for i in 0..inner {
                max = max.max(xv[idx(i)]);
            }
            let mut total = 0.0;
            for i in 0..inner {
                let e = (xv[idx(i)] - max).exp();
                values[idx(i)] = e;
                total += e;
            }
            for i in 0..inner {
                values[idx(i)] /= total;
            }
        }
        let grad = self.needs_grad(&[x]);
        Ok(self.push(rows, cols, values, grad, Op::Softmax { x, axis }))
    }

    /// Elementwise natural logarithm.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v.ln()).collect();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(self.rows(x), self.cols(x), values, grad, Op::Log(x)))
    }

    /// Column-wise maximum over rows: `m×n → 1×n`. Gradients flow to the
    /// first row attaining each column's maximum.
    pub fn row_maxpool(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if rows == 0 {
            return Err(Error::Shape("row_maxpool needs at least one row".into()));
        }
        let xv = self.values(x);
        let mut values = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![0usize; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = xv[r * cols + c];
                if v > values[c] {
                    values[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let grad = self.needs_grad(&[x]);
        Ok(self.push(1, cols, values, grad, Op::RowMaxPool { x, argmax }))
    }

    /// Gathers rows of `table` by index: with `table` of shape `V×d` and
    /// `ids` of length `N`, yields `N×d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = (self.rows(table), self.cols(table));
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Shape(format!(
                "embedding index {bad} out of range for table with {v} rows"
            )));
        }
        let tv = self.values(table);
        let mut values = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            values.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let grad = self.needs_grad(&[table]);
        Ok(self.push(
            ids.len(),
            d,
            values,
            grad,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Rectangular sub-block `rows × cols` of a tensor.
    pub fn slice(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let (r, c) = (self.rows(x), self.cols(x));
        if rows.start >= rows.end || rows.end > r || cols.start >= cols.end || cols.end > c {
            return Err(Error::Shape(format!(
                "slice [{rows:?}, {cols:?}] out of bounds for {r}x{c}"
            )));
        }
        let xv = self.values(x);
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            values.extend_from_slice(&xv[i * c + cols.start..i * c + cols.end]);
        }
        let grad = self.needs_grad(&[x]);
        Ok(self.push(
            rows.len(),
            cols.len(),
            values,
            grad,
            Op::Slice { x, rows, cols },
        ))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.values(x).iter().sum();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(1, 1, vec![total], grad, Op::Sum(x)))
    }

    /// Mean of all entries, as a 1×1 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.values(x).len();
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let total: f64 = self.values(x).iter().sum();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(1, 1, vec![total / n as f64], grad, Op::Mean(x)))
    }

    /// Multiplication by a compile-time scalar.
    pub fn scalar_mul(&mut self, x: Var, k: f64) -> Result<Var> {
        let values: Vec<f64> = self.values(x).iter().map(|v| v * k).collect();
        let grad = self.needs_grad(&[x]);
        Ok(self.push(self.rows(x), self.cols(x), values, grad, Op::ScalarMul { x, k }))
    }

    /// Reverse-mode pass from a scalar loss. Returns gradients for every
    /// participating tensor that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.values.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                loss_node.rows, loss_node.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(gout);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Matmul(a, b) => {
                    let (m, k) = (self.rows(*a), self.cols(*a));
                    let n = self.cols(*b);
                    if self.nodes[a.0].requires_grad {
                        let da = mat_mul_bt(&gout, self.values(*b), m, n, k);
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = mat_mul_at(self.values(*a), &gout, m, k, n);
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        self.accumulate(&mut grads, *b, gout.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                        self.accumulate(&mut grads, *b, neg);
                    }
                }
                Op::MulElem(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<f64> = gout
                            .iter()
                            .zip(self.values(*b))
                            .map(|(g, y)| g * y)
                            .collect();
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<f64> = gout
                            .iter()
                            .zip(self.values(*a))
                            .map(|(g, x)| g * x)
                            .collect();
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let cols = node.cols;
                        let mut row = 0;
                        for &p in parts {
                            let pr = self.rows(p);
                            if self.nodes[p.0].requires_grad {
                                let dp =
                                    gout[row * cols..(row + pr) * cols].to_vec();
                                self.accumulate(&mut grads, p, dp);
                            }
                            row += pr;
                        }
                    } else {
                        let rows = node.rows;
                        let total_cols = node.cols;
                        let mut col = 0;
                        for &p in parts {
                            let pc = self.cols(p);
                            if self.nodes[p.0].requires_grad {
                                let mut dp = Vec::with_capacity(rows * pc);
                                for r in 0..rows {
                                    dp.extend_from_slice(
                                        &gout[r * total_cols + col..r * total_cols + col + pc],
                                    );
                                }
                                self.accumulate(&mut grads, p, dp);
                            }
                            col += pc;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(&node.values)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(&node.values)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(self.values(*x))
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Softmax { x, axis } => {
                    let (rows, cols) = (node.rows, node.cols);
                    let y = &node.values;
                    let mut dx = vec![0.0; rows * cols];
                    let (outer, inner, outer_stride, inner_stride) = if *axis == 1 {
                        (rows, cols, cols, 1)
                    } else {
                        (cols, rows, 1, cols)
                    };
                    for o in 0..outer {
                        let idx = |i: usize| o * outer_stride + i * inner_stride;
                        let mut dot = 0.0;
                        for i in 0..inner {
                            dot += gout[idx(i)] * y[idx(i)];
                        }
                        for i in 0..inner {
                            dx[idx(i)] = y[idx(i)] * (gout[idx(i)] - dot);
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Log(x) => {
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(self.values(*x))
                        .map(|(g, v)| g / v)
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::RowMaxPool { x, argmax } => {
                    let cols = node.cols;
                    let mut dx = vec![0.0; self.values(*x).len()];
                    for c in 0..cols {
                        dx[argmax[c] * cols + c] += gout[c];
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Embedding { table, ids } => {
                    let d = node.cols;
                    let mut dt = vec![0.0; self.values(*table).len()];
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += gout[row * d + c];
                        }
                    }
                    self.accumulate(&mut grads, *table, dt);
                }
                Op::Slice { x, rows, cols } => {
                    let full_cols = self.cols(*x);
                    let mut dx = vec![0.0; self.values(*x).len()];
                    let width = cols.len();
                    for (ri, i) in rows.clone().enumerate() {
                        for (ci, j) in cols.clone().enumerate() {
                            dx[i * full_cols + j] += gout[ri * width + ci];
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let g = gout[0];
                    let dx = vec![g; self.values(*x).len()];
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Mean(x) => {
                    let n = self.values(*x).len();
                    let g = gout[0] / n as f64;
                    let dx = vec![g; n];
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::ScalarMul { x, k } => {
                    let dx: Vec<f64> = gout.iter().map(|g| g * k).collect();
                    self.accumulate(&mut grads, *x, dx);
                }
            }
            grads[i] = Some(gout);
        }

        // Keep gradients only where they are meaningful (grad-requiring
        // tensors); intermediate pass-through buffers stay available too,
        // which is harmless and useful for debugging.
        Ok(Gradients { by_node: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(&delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `C·Bᵀ` where `C` is m×n and `B` is k×n → m×k.
fn mat_mul_bt(c: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let mut acc = 0.0;
            for j in 0..n {
                acc += c[i * n + j] * b[p * n + j];
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `Aᵀ·C` where `A` is m×k and `C` is m×n → k×n.
fn mat_mul_at(a: &[f64], c: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &c[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * crow[j];
            }
        }
    }
    out
}
