//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! vector-Jacobian products into the leaves that were created with
//! `requires_grad`.

use std::sync::Arc;

use super::kernels::{self, sigmoid};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Silu(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    Softmax(Var),
    RotatePairs { x: Var, cos: Arc<Vec<T>>, sin: Arc<Vec<T>> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_fwd(self.value(a), self.value(b), false)?;
        self.push(out, Op::MatMul { a, b, trans_b: false }, &[a, b], "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_fwd(self.value(a), self.value(b), true)?;
        self.push(out, Op::MatMul { a, b, trans_b: true }, &[a, b], "matmul")
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    fn broadcast_row(&mut self, a: Var, row: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vr) = (self.value(a), self.value(row));
        let n = va.cols();
        if vr.len() != n {
            return Err(Error::dim(format!(
                "{what}: row of {} values against {:?}",
                vr.len(),
                va.shape()
            )));
        }
        let r = vr.data();
        let data = va.data().iter().enumerate().map(|(i, &x)| f(x, r[i % n])).collect();
        Tensor::from_vec(va.shape(), data)
    }

    /// `a [m×n] + row [n]`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row(a, row, "add_row", |x, y| x + y)?;
        self.push(out, Op::AddRow(a, row), &[a, row], "add_row")
    }

    /// `a [m×n] ⊙ row [n]`, broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row(a, row, "mul_row", |x, y| x * y)?;
        self.push(out, Op::MulRow(a, row), &[a, row], "mul_row")
    }

    /// `a [m×n] ⊙ col [m]`, each row scaled by its own factor.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        let m = va.rows();
        if vc.len() != m {
            return Err(Error::dim(format!(
                "mul_col: column of {} values against {:?}",
                vc.len(),
                va.shape()
            )));
        }
        let n = va.cols();
        let c = vc.data();
        let data = va.data().iter().enumerate().map(|(i, &x)| x * c[i / n]).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        self.push(out, Op::MulCol(a, col), &[a, col], "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a), &[a], "silu")
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (out, inv_rms) = kernels::rms_norm_fwd(self.value(x), self.value(gain))?;
        self.push(out, Op::RmsNorm { x, gain, inv_rms }, &[x, gain], "rms_norm")
    }

    /// Row-wise softmax of `scores + mask`. The mask is a constant.
    pub fn masked_softmax(&mut self, scores: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let out = kernels::masked_softmax_fwd(self.value(scores), mask)?;
        self.push(out, Op::Softmax(scores), &[scores], "softmax")
    }

    /// Rotates element pairs `(2p, 2p+1)` of row `r` by the angle whose cosine
    /// and sine are stored at `r * cols/2 + p`.
    pub fn rotate_pairs(&mut self, x: Var, cos: Arc<Vec<T>>, sin: Arc<Vec<T>>) -> Result<Var> {
        let vx = self.value(x);
        if !vx.cols().is_multiple_of(2) || cos.len() != vx.len() / 2 || sin.len() != cos.len() {
            return Err(Error::dim(format!(
                "rotate_pairs: {:?} against a table of {} angles",
                vx.shape(),
                cos.len()
            )));
        }
        let out = kernels::rotate_pairs_fwd(vx, &cos, &sin, false);
        self.push(out, Op::RotatePairs { x, cos, sin }, &[x], "rotate_pairs")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        if start + len > n {
            return Err(Error::dim(format!("slice_cols {start}+{len} beyond {n} columns")));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(&[m, len], data)?;
        self.push(out, Op::SliceCols { a, start }, &[a], "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::dim("concat_cols: row counts differ"));
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(&[m, n], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        if start + len > m {
            return Err(Error::dim(format!("slice_rows {start}+{len} beyond {m} rows")));
        }
        let data = va.data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::from_vec(&[len, n], data)?;
        self.push(out, Op::SliceRows { a, start }, &[a], "slice_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            return Err(Error::dim("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            m += self.value(p).rows();
        }
        let out = Tensor::from_vec(&[m, n], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, n) = (vt.rows(), vt.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim(format!("gather id {bad} outside table of {v} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(&[ids.len(), n], data)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            "gather",
        )
    }

    /// Mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        if m == 0 {
            return Err(Error::dim("mean_rows of an empty tensor"));
        }
        let mut data = vec![T::zero(); n];
        for r in 0..m {
            for (acc, &x) in data.iter_mut().zip(va.row(r)) {
                *acc = *acc + x;
            }
        }
        let inv = T::one() / T::from_usize(m).unwrap();
        data.iter_mut().for_each(|x| *x = *x * inv);
        let out = Tensor::from_vec(&[1, n], data)?;
        self.push(out, Op::MeanRows(a), &[a], "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    /// Populates `grad` for every leaf that requires it and is reachable from
    /// `loss`. Gradients accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let n = loss.0 + 1;
        let mut g: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        g[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                gout.ensure_finite("gradient")?;
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&gout),
                    slot => *slot = Some(gout),
                }
                continue;
            }
            self.backprop_node(i, &gout, &mut g)?;
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, gout: &Tensor<T>, g: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k) = (va.rows(), va.cols());
                let n = y.cols();
                let bc = vb.cols();
                if self.wants(a) {
                    // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                    let b_strides = if trans_b { (bc, 1) } else { (1, bc) };
                    let buf = slot(g, a, va.shape());
                    T::gemm(m, n, k, gout.data(), (n, 1), vb.data(), b_strides, buf.data_mut(), true);
                }
                if self.wants(b) {
                    let buf = slot(g, b, vb.shape());
                    if trans_b {
                        // dB [n×k] = dCᵀ · A
                        T::gemm(n, m, k, gout.data(), (1, n), va.data(), (k, 1), buf.data_mut(), true);
                    } else {
                        // dB [k×n] = Aᵀ · dC
                        T::gemm(k, m, n, va.data(), (1, k), gout.data(), (n, 1), buf.data_mut(), true);
                    }
                }
            }
            &Op::Add(a, b) => {
                self.acc_map(g, a, gout, |x, _| x);
                self.acc_map(g, b, gout, |x, _| x);
            }
            &Op::Sub(a, b) => {
                self.acc_map(g, a, gout, |x, _| x);
                self.acc_map(g, b, gout, |x, _| -x);
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let vb = self.value(b).data();
                    self.acc_map(g, a, gout, |x, j| x * vb[j]);
                }
                if self.wants(b) {
                    let va = self.value(a).data();
                    self.acc_map(g, b, gout, |x, j| x * va[j]);
                }
            }
            &Op::AddRow(a, row) => {
                self.acc_map(g, a, gout, |x, _| x);
                if self.wants(row) {
                    let n = gout.cols();
                    let buf = slot(g, row, self.value(row).shape());
                    let bd = buf.data_mut();
                    for (j, &x) in gout.data().iter().enumerate() {
                        bd[j % n] = bd[j % n] + x;
                    }
                }
            }
            &Op::MulRow(a, row) => {
                let n = gout.cols();
                if self.wants(a) {
                    let r = self.value(row).data();
                    self.acc_map(g, a, gout, |x, j| x * r[j % n]);
                }
                if self.wants(row) {
                    let va = self.value(a).data();
                    let buf = slot(g, row, self.value(row).shape());
                    let bd = buf.data_mut();
                    for (j, &x) in gout.data().iter().enumerate() {
                        bd[j % n] = bd[j % n] + x * va[j];
                    }
                }
            }
            &Op::MulCol(a, col) => {
                let n = gout.cols();
                if self.wants(a) {
                    let c = self.value(col).data();
                    self.acc_map(g, a, gout, |x, j| x * c[j / n]);
                }
                if self.wants(col) {
                    let va = self.value(a).data();
                    let buf = slot(g, col, self.value(col).shape());
                    let bd = buf.data_mut();
                    for (j, &x) in gout.data().iter().enumerate() {
                        bd[j / n] = bd[j / n] + x * va[j];
                    }
                }
            }
            &Op::Scale(a, s) => self.acc_map(g, a, gout, |x, _| x * s),
            &Op::Silu(a) => {
                let va = self.value(a).data();
                self.acc_map(g, a, gout, |x, j| {
                    let s = sigmoid(va[j]);
                    x * s * (T::one() + va[j] * (T::one() - s))
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (x, gain) = (*x, *gain);
                let vx = self.value(x);
                let gv = self.value(gain).data();
                let d = vx.cols();
                let dn = T::from_usize(d).unwrap();
                if self.wants(x) {
                    let mut dx = vec![T::zero(); vx.len()];
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        let xs = &vx.data()[r * d..(r + 1) * d];
                        let gs = &gout.data()[r * d..(r + 1) * d];
                        let dot: T = (0..d).map(|j| gs[j] * gv[j] * xs[j]).sum();
                        let c = ir * ir * ir * dot / dn;
                        for j in 0..d {
                            dx[r * d + j] = ir * gv[j] * gs[j] - c * xs[j];
                        }
                    }
                    add_into(g, x, vx.shape(), &dx);
                }
                if self.wants(gain) {
                    let buf = slot(g, gain, self.value(gain).shape());
                    let bd = buf.data_mut();
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        for (j, b) in bd.iter_mut().enumerate() {
                            *b = *b + gout.data()[r * d + j] * vx.data()[r * d + j] * ir;
                        }
                    }
                }
            }
            &Op::Softmax(a) => {
                if self.wants(a) {
                    let n = y.cols();
                    let mut dx = vec![T::zero(); y.len()];
                    for r in 0..y.rows() {
                        let ys = y.row(r);
                        let gs = gout.row(r);
                        let dot: T = ys.iter().zip(gs).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            dx[r * n + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    add_into(g, a, y.shape(), &dx);
                }
            }
            Op::RotatePairs { x, cos, sin } => {
                if self.wants(*x) {
                    let dx = kernels::rotate_pairs_fwd(gout, cos, sin, true);
                    add_into(g, *x, y.shape(), dx.data());
                }
            }
            &Op::SliceCols { a, start } => {
                if self.wants(a) {
                    let va_shape = self.value(a).shape().to_vec();
                    let n = *va_shape.last().unwrap();
                    let buf = slot(g, a, &va_shape);
                    let bd = buf.data_mut();
                    for r in 0..gout.rows() {
                        for (j, &x) in gout.row(r).iter().enumerate() {
                            let t = r * n + start + j;
                            bd[t] = bd[t] + x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = gout.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let buf = slot(g, p, self.value(p).shape());
                        let bd = buf.data_mut();
                        for r in 0..gout.rows() {
                            for j in 0..w {
                                bd[r * w + j] = bd[r * w + j] + gout.data()[r * n + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            &Op::SliceRows { a, start } => {
                if self.wants(a) {
                    let n = gout.cols();
                    let buf = slot(g, a, self.value(a).shape());
                    let bd = &mut buf.data_mut()[start * n..start * n + gout.len()];
                    for (t, &x) in bd.iter_mut().zip(gout.data()) {
                        *t = *t + x;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        add_into(g, p, self.value(p).shape(), &gout.data()[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let n = gout.cols();
                    let buf = slot(g, *table, self.value(*table).shape());
                    let bd = buf.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            bd[id * n + j] = bd[id * n + j] + gout.data()[r * n + j];
                        }
                    }
                }
            }
            &Op::MeanRows(a) => {
                if self.wants(a) {
                    let va = self.value(a);
                    let n = va.cols();
                    let inv = T::one() / T::from_usize(va.rows()).unwrap();
                    self.acc_map(g, a, va, |_, j| gout.data()[j % n] * inv);
                }
            }
            &Op::Sum(a) => {
                let s = gout.item();
                let shape = self.value(a).shape().to_vec();
                if self.wants(a) {
                    let buf = slot(g, a, &shape);
                    buf.data_mut().iter_mut().for_each(|x| *x = *x + s);
                }
            }
        }
        Ok(())
    }

    /// `g[v] += f(reference[j], j)` elementwise, skipping non-differentiable inputs.
    fn acc_map(&self, g: &mut [Option<Tensor<T>>], v: Var, reference: &Tensor<T>, f: impl Fn(T, usize) -> T) {
        if !self.wants(v) {
            return;
        }
        let buf = slot(g, v, self.value(v).shape());
        for (j, (t, &x)) in buf.data_mut().iter_mut().zip(reference.data()).enumerate() {
            *t = *t + f(x, j);
        }
    }
}

fn slot<'a, T: Scalar>(g: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    g[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_into<T: Scalar>(g: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], vals: &[T]) {
    let buf = slot(g, v, shape);
    for (t, &x) in buf.data_mut().iter_mut().zip(vals) {
        *t = *t + x;
    }
}
