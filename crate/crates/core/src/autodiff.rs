//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in evaluation order; a [`Var`] is a
//! handle to one recorded value. [`Tape::backward`] walks the record once
//! in reverse and accumulates vector-Jacobian products into every leaf that
//! was created with `requires_grad`.
//!
//! There is no implicit broadcasting. The two row/column broadcasts the
//! batched geometry needs are explicit primitives: [`Tape::add_row`] adds a
//! `1 × c` row to every row, [`Tape::mul_col`] scales every row by the
//! matching entry of an `r × 1` column.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{atanh, ln, sigmoid, sqrt, tanh};
use crate::matrix::{matmul_nt_into, matmul_tn_into};
use crate::{Error, Matrix, Result, DENOM_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    SumCols(Var),
    Sum(Var),
    L2NormRows(Var),
    Tanh(Var),
    Atanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Concat(Var, Var),
    Reshape(Var),
    BatchMatVec(Var, Var, usize),
    BatchMatTVec(Var, Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves a leaf gradient out of the tape (zeros if none reached it).
    pub fn take_grad(&mut self, v: Var) -> Matrix {
        let shape = self.nodes[v.0].value.shape();
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericalFault(format!("{name}: non-finite output")));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va, vb));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Alias of [`Tape::mul`].
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.mul(a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + s)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Adds the `1 × c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", va, vr));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.as_slice()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(shape_err("mul_col", va, vc));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            let s = vc.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        self.push("mul_col", out, Op::MulCol(a, col), &[a, col])
    }

    /// Row sums as an `r × 1` column.
    pub fn sum_pool(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = Matrix::column((0..va.rows()).map(|r| va.row(r).iter().sum()).collect());
        self.push("sum_pool", out, Op::SumCols(a), &[a])
    }

    /// Sum of all entries as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).as_slice().iter().sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    /// Euclidean norm of each row as an `r × 1` column.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = Matrix::column(
            (0..va.rows())
                .map(|r| crate::math::norm(va.row(r)))
                .collect(),
        );
        self.push("l2_norm", out, Op::L2NormRows(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a), tanh)
    }

    /// Inverse hyperbolic tangent; clamp the input first near `±1`.
    pub fn arctanh(&mut self, a: Var) -> Result<Var> {
        self.unary("arctanh", a, Op::Atanh(a), atanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, Op::Sqrt(a), sqrt)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = crate::math::exp(*x - max);
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.push("softmax", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, Op::Log(a), ln)
    }

    /// Clamps into `[lo, hi]`; the gradient passes through only inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err("concat", va, vb));
        }
        let mut out = Matrix::zeros(va.rows(), va.cols() + vb.cols());
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        self.push("concat", out, Op::Concat(a, b), &[a, b])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Row `b` of `mats` is a row-major `rows × c` matrix `A_b`; returns the
    /// `B × rows` matrix whose row `b` is `A_b · v_b`.
    pub fn batch_matvec(&mut self, mats: Var, v: Var, rows: usize) -> Result<Var> {
        let (vm, vv) = (self.value(mats), self.value(v));
        let c = vv.cols();
        if vm.rows() != vv.rows() || vm.cols() != rows * c {
            return Err(shape_err("batch_matvec", vm, vv));
        }
        let mut out = Matrix::zeros(vv.rows(), rows);
        for b in 0..vv.rows() {
            let a = vm.row(b);
            let x = vv.row(b);
            for (i, o) in out.row_mut(b).iter_mut().enumerate() {
                *o = crate::math::dot(&a[i * c..(i + 1) * c], x);
            }
        }
        self.push(
            "batch_matvec",
            out,
            Op::BatchMatVec(mats, v, rows),
            &[mats, v],
        )
    }

    /// Same layout as [`Tape::batch_matvec`] but applies `A_bᵀ · v_b`.
    pub fn batch_matvec_t(&mut self, mats: Var, v: Var, rows: usize) -> Result<Var> {
        let (vm, vv) = (self.value(mats), self.value(v));
        if vm.rows() != vv.rows() || vv.cols() != rows || rows == 0 || vm.cols() % rows != 0 {
            return Err(shape_err("batch_matvec_t", vm, vv));
        }
        let c = vm.cols() / rows;
        let mut out = Matrix::zeros(vv.rows(), c);
        for b in 0..vv.rows() {
            let a = vm.row(b);
            let x = vv.row(b);
            let o = out.row_mut(b);
            for (i, &xi) in x.iter().enumerate() {
                for (oj, aij) in o.iter_mut().zip(&a[i * c..(i + 1) * c]) {
                    *oj += aij * xi;
                }
            }
        }
        self.push(
            "batch_matvec_t",
            out,
            Op::BatchMatTVec(mats, v, rows),
            &[mats, v],
        )
    }

    /// Accumulates `d loss / d leaf` for every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::DetachedTape);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&mut self, idx: usize, g: &Matrix) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let c = hadamard(g, self.value(b));
                    self.accumulate(a, c);
                }
                if self.wants(b) {
                    let c = hadamard(g, self.value(a));
                    self.accumulate(b, c);
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(b);
                if self.wants(a) {
                    let c = zip(g, vb, |gi, bi| gi / bi);
                    self.accumulate(a, c);
                }
                if self.wants(b) {
                    let y = &self.nodes[idx].value;
                    let vb = self.value(b);
                    let c = zip3(g, y, vb, |gi, yi, bi| -gi * yi / bi);
                    self.accumulate(b, c);
                }
            }
            Op::Scale(a, f) => self.accumulate(a, g.map(|x| x * f)),
            Op::AddScalar(a) => self.accumulate(a, g.clone()),
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let vb = self.value(b);
                    let mut c = Matrix::zeros(g.rows(), vb.rows());
                    matmul_nt_into(g, vb, &mut c);
                    self.accumulate(a, c);
                }
                if self.wants(b) {
                    let va = self.value(a);
                    let mut c = Matrix::zeros(va.cols(), g.cols());
                    matmul_tn_into(va, g, &mut c);
                    self.accumulate(b, c);
                }
            }
            Op::Transpose(a) => self.accumulate(a, g.transpose()),
            Op::AddRow(a, row) => {
                self.accumulate(a, g.clone());
                if self.wants(row) {
                    let mut c = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in c.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.accumulate(row, c);
                }
            }
            Op::MulCol(a, col) => {
                if self.wants(a) {
                    let vc = self.value(col);
                    let mut c = g.clone();
                    for r in 0..c.rows() {
                        let s = vc.get(r, 0);
                        c.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    self.accumulate(a, c);
                }
                if self.wants(col) {
                    let va = self.value(a);
                    let c = Matrix::column(
                        (0..g.rows())
                            .map(|r| crate::math::dot(g.row(r), va.row(r)))
                            .collect(),
                    );
                    self.accumulate(col, c);
                }
            }
            Op::SumCols(a) => {
                let va = self.value(a);
                let mut c = Matrix::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let gr = g.get(r, 0);
                    c.row_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                self.accumulate(a, c);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(a).shape();
                self.accumulate(a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::L2NormRows(a) => {
                let va = self.value(a);
                let y = &self.nodes[idx].value;
                let mut c = va.clone();
                for r in 0..c.rows() {
                    let s = g.get(r, 0) / (y.get(r, 0) + DENOM_EPS);
                    c.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                self.accumulate(a, c);
            }
            Op::Tanh(a) => {
                let c = zip(g, &self.nodes[idx].value, |gi, yi| gi * (1.0 - yi * yi));
                self.accumulate(a, c);
            }
            Op::Atanh(a) => {
                let c = zip(g, self.value(a), |gi, xi| gi / (1.0 - xi * xi));
                self.accumulate(a, c);
            }
            Op::Sigmoid(a) => {
                let c = zip(g, &self.nodes[idx].value, |gi, yi| gi * yi * (1.0 - yi));
                self.accumulate(a, c);
            }
            Op::Sqrt(a) => {
                let c = zip(g, &self.nodes[idx].value, |gi, yi| {
                    gi / (2.0 * yi.max(DENOM_EPS))
                });
                self.accumulate(a, c);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut c = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = crate::math::dot(g.row(r), y.row(r));
                    for ((o, gi), yi) in c.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yi * (gi - inner);
                    }
                }
                self.accumulate(a, c);
            }
            Op::Log(a) => {
                let c = zip(g, self.value(a), |gi, xi| gi / xi);
                self.accumulate(a, c);
            }
            Op::Clamp(a, lo, hi) => {
                let c = zip(g, self.value(a), |gi, xi| {
                    if (lo..=hi).contains(&xi) {
                        gi
                    } else {
                        0.0
                    }
                });
                self.accumulate(a, c);
            }
            Op::Concat(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                if self.wants(a) {
                    let mut c = Matrix::zeros(g.rows(), ca);
                    for r in 0..g.rows() {
                        c.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    self.accumulate(a, c);
                }
                if self.wants(b) {
                    let mut c = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        c.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    self.accumulate(b, c);
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(a).shape();
                // shapes were validated in the forward pass
                let back = g.clone().reshaped(r, c).expect("reshape gradient");
                self.accumulate(a, back);
            }
            Op::BatchMatVec(mats, v, rows) => {
                let vm = self.value(mats);
                let vv = self.value(v);
                let c = vv.cols();
                let (mut gm_out, mut gv_out) = (None, None);
                if self.wants(mats) {
                    let mut gm = Matrix::zeros(vm.rows(), vm.cols());
                    for b in 0..vv.rows() {
                        let x = vv.row(b);
                        let gb = g.row(b);
                        let out = gm.row_mut(b);
                        for i in 0..rows {
                            let gi = gb[i];
                            for (o, xj) in out[i * c..(i + 1) * c].iter_mut().zip(x) {
                                *o = gi * xj;
                            }
                        }
                    }
                    gm_out = Some(gm);
                }
                if self.wants(v) {
                    let mut gv = Matrix::zeros(vv.rows(), c);
                    for b in 0..vv.rows() {
                        let a = vm.row(b);
                        let gb = g.row(b);
                        let out = gv.row_mut(b);
                        for (i, &gi) in gb.iter().enumerate() {
                            for (o, aij) in out.iter_mut().zip(&a[i * c..(i + 1) * c]) {
                                *o += aij * gi;
                            }
                        }
                    }
                    gv_out = Some(gv);
                }
                if let Some(gm) = gm_out {
                    self.accumulate(mats, gm);
                }
                if let Some(gv) = gv_out {
                    self.accumulate(v, gv);
                }
            }
            Op::BatchMatTVec(mats, v, rows) => {
                let vm = self.value(mats);
                let vv = self.value(v);
                let c = vm.cols() / rows;
                let (mut gm_out, mut gv_out) = (None, None);
                if self.wants(mats) {
                    let mut gm = Matrix::zeros(vm.rows(), vm.cols());
                    for b in 0..vv.rows() {
                        let x = vv.row(b);
                        let gb = g.row(b);
                        let out = gm.row_mut(b);
                        for (i, &xi) in x.iter().enumerate() {
                            for (o, gj) in out[i * c..(i + 1) * c].iter_mut().zip(gb) {
                                *o = xi * gj;
                            }
                        }
                    }
                    gm_out = Some(gm);
                }
                if self.wants(v) {
                    let mut gv = Matrix::zeros(vv.rows(), rows);
                    for b in 0..vv.rows() {
                        let a = vm.row(b);
                        let gb = g.row(b);
                        for (i, o) in gv.row_mut(b).iter_mut().enumerate() {
                            *o = crate::math::dot(&a[i * c..(i + 1) * c], gb);
                        }
                    }
                    gv_out = Some(gv);
                }
                if let Some(gm) = gm_out {
                    self.accumulate(mats, gm);
                }
                if let Some(gv) = gv_out {
                    self.accumulate(v, gv);
                }
            }
        }
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn zip3(a: &Matrix, b: &Matrix, c: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(c.as_slice())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip(a, b, |x, y| x * y)
}

/// Gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p - lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidLearningRate(lr));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update and zeroes `grads`.
    pub fn step(&mut self, params: &mut [Matrix], grads: &mut [Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
        }
        for ((p, g), v) in params
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(&mut self.velocity)
        {
            if p.shape() != g.shape() {
                return Err(shape_err("sgd_step", p, g));
            }
            for ((pi, gi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(v.as_mut_slice())
            {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
            g.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Tape, Var) -> Result<Var>, x: f64) -> f64 {
        let mut t = Tape::new();
        let v = t.param(Matrix::scalar(x));
        let y = f(&mut t, v).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        t.grad(v).unwrap().get(0, 0)
    }

    #[test]
    fn analytic_derivatives() {
        assert_eq!(scalar_grad(|t, v| t.tanh(v), 0.0), 1.0);
        let g = scalar_grad(|t, v| t.arctanh(v), 0.5);
        assert!((g - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(2, 4, 0.7));
        let y = t.softmax(x).unwrap();
        assert!(t
            .value(y)
            .as_slice()
            .iter()
            .all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sum_and_square_norm_gradients() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(vec![1.0, -2.0, 3.0]));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(vec![1.0, -2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss((1, 2)))));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(Error::DetachedTape));
        t.reset();
        assert!(t.is_empty());
    }

    #[test]
    fn shape_errors_and_faults() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(3, 2));
        assert!(matches!(t.add(a, b), Err(Error::Shape { op: "add", .. })));
        let z = t.constant(Matrix::scalar(0.0));
        let l = t.log(z);
        assert!(matches!(l, Err(Error::NumericalFault(ref s)) if s.starts_with("log")));
    }

    #[test]
    fn clamp_is_straight_through_inside_only() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(vec![-2.0, 0.3, 2.0]));
        let c = t.clamp(x, -1.0, 1.0).unwrap();
        let s = t.sum(c).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sgd_examples() {
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        let mut p = [Matrix::scalar(1.0)];
        let mut g = [Matrix::scalar(2.0)];
        opt.step(&mut p, &mut g).unwrap();
        assert!((p[0].get(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(g[0].get(0, 0), 0.0);

        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        let mut p = [Matrix::scalar(1.0)];
        opt.step(&mut p, &mut [Matrix::scalar(0.0)]).unwrap();
        assert_eq!(p[0].get(0, 0), 1.0);

        let (lr, grad) = (0.1, 0.5);
        let mut opt = Sgd::new(lr, 0.9).unwrap();
        let mut p = [Matrix::scalar(0.0)];
        opt.step(&mut p, &mut [Matrix::scalar(grad)]).unwrap();
        assert!((p[0].get(0, 0) + lr * grad).abs() < 1e-15);
        opt.step(&mut p, &mut [Matrix::scalar(grad)]).unwrap();
        let expected = -lr * grad - lr * (grad + 0.9 * grad);
        assert!((p[0].get(0, 0) - expected).abs() < 1e-15);

        assert!(matches!(
            Sgd::new(0.0, 0.9),
            Err(Error::InvalidLearningRate(_))
        ));
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
