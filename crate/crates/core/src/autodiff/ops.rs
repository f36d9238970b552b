//! Forward and backward rules for every primitive.

use super::{Array, Graph, Op, Tid};
use crate::error::{HnrError, Result};

const LN_EPS: f64 = 1e-5;

/// Broadcast relationship between the two operands of an elementwise op.
enum Bcast {
    Same,
    /// rhs is a scalar.
    Scalar,
    /// lhs is [n, d] (or [d]), rhs is [d]: rhs repeats across rows.
    Rows { rows: usize, cols: usize },
}

fn bcast(left: &[usize], right: &[usize], op: &'static str) -> Result<Bcast> {
    if left == right {
        return Ok(Bcast::Same);
    }
    if right == [1] {
        return Ok(Bcast::Scalar);
    }
    if left.len() == 2 && right.len() == 1 && right[0] == left[1] {
        return Ok(Bcast::Rows { rows: left[0], cols: left[1] });
    }
    Err(HnrError::Shape { op, left: left.to_vec(), right: right.to_vec() })
}

fn elementwise(g: &Graph, a: Tid, b: Tid, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
    let av = g.value(a);
    let bv = g.value(b);
    let mut out = av.clone();
    match bcast(av.shape(), bv.shape(), op)? {
        Bcast::Same => {
            for (x, y) in out.data_mut().iter_mut().zip(bv.data()) {
                *x = f(*x, *y);
            }
        }
        Bcast::Scalar => {
            let y = bv.data()[0];
            for x in out.data_mut() {
                *x = f(*x, y);
            }
        }
        Bcast::Rows { rows, cols } => {
            for r in 0..rows {
                let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
                for (x, y) in row.iter_mut().zip(bv.data()) {
                    *x = f(*x, *y);
                }
            }
        }
    }
    Ok(out)
}

/// Reduce a full-shaped gradient back to the (possibly broadcast) rhs shape.
fn reduce_to(g_full: &Array, target_shape: &[usize]) -> Array {
    if g_full.shape() == target_shape {
        return g_full.clone();
    }
    if target_shape == [1] {
        return Array::scalar(g_full.data().iter().sum());
    }
    // Rows broadcast: sum over rows.
    let cols = target_shape[0];
    let rows = g_full.len() / cols;
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, x) in out.iter_mut().zip(&g_full.data()[r * cols..(r + 1) * cols]) {
            *o += x;
        }
    }
    Array::vector(out)
}

impl Graph {
    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let v = elementwise(self, a, b, "add", |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let v = elementwise(self, a, b, "sub", |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let v = elementwise(self, a, b, "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let v = elementwise(self, a, b, "div", |x, y| x / y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::Div(a, b), "div")
    }

    pub fn neg(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(|x| -x);
        let rg = self.requires(a);
        self.push(v, rg, Op::Neg(a), "neg")
    }

    pub fn scale(&mut self, a: Tid, s: f64) -> Result<Tid> {
        let v = self.value(a).map(|x| x * s);
        let rg = self.requires(a);
        self.push(v, rg, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Tid, s: f64) -> Result<Tid> {
        let v = self.value(a).map(|x| x + s);
        let rg = self.requires(a);
        self.push(v, rg, Op::AddScalar(a), "add_scalar")
    }

    /// [n,k]·[k,m] → [n,m]. Rank-1 lhs is treated as [1,k], rank-1 rhs as [k,1].
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (an, ak) = self.value(a).rows_cols();
        let bv = self.value(b);
        let (bk, bm) = match bv.rank() {
            1 => (bv.shape()[0], 1),
            2 => (bv.shape()[0], bv.shape()[1]),
            _ => {
                return Err(HnrError::Shape {
                    op: "matmul",
                    left: self.shape(a).to_vec(),
                    right: bv.shape().to_vec(),
                })
            }
        };
        if ak != bk {
            return Err(HnrError::Shape {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data = Array::matmul_nn(self.value(a), self.value(b), an, ak, bm);
        let out_shape = match (self.value(a).rank(), bv.rank()) {
            (1, 1) => vec![1],
            (1, 2) => vec![bm],
            (2, 1) => vec![an],
            _ => vec![an, bm],
        };
        let v = Array::from_vec(out_shape, data);
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::Matmul(a, b), "matmul")
    }

    pub fn exp(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(f64::exp);
        let rg = self.requires(a);
        self.push(v, rg, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(f64::ln);
        let rg = self.requires(a);
        self.push(v, rg, Op::Log(a), "log")
    }

    pub fn tanh(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(f64::tanh);
        let rg = self.requires(a);
        self.push(v, rg, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.requires(a);
        self.push(v, rg, Op::Relu(a), "relu")
    }

    pub fn softplus(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        let rg = self.requires(a);
        self.push(v, rg, Op::Softplus(a), "softplus")
    }

    pub fn sigmoid(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(sigmoid);
        let rg = self.requires(a);
        self.push(v, rg, Op::Sigmoid(a), "sigmoid")
    }

    pub fn sqrt(&mut self, a: Tid) -> Result<Tid> {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.requires(a);
        self.push(v, rg, Op::Sqrt(a), "sqrt")
    }

    pub fn sum_all(&mut self, a: Tid) -> Result<Tid> {
        let v = Array::scalar(self.value(a).data().iter().sum());
        let rg = self.requires(a);
        self.push(v, rg, Op::SumAll(a), "sum")
    }

    pub fn mean_all(&mut self, a: Tid) -> Result<Tid> {
        let n = self.value(a).len() as f64;
        let v = Array::scalar(self.value(a).data().iter().sum::<f64>() / n);
        let rg = self.requires(a);
        self.push(v, rg, Op::MeanAll(a), "mean")
    }

    /// Column means of [n,d] → [d].
    pub fn mean_rows(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(HnrError::Shape { op: "mean_rows", left: av.shape().to_vec(), right: vec![] });
        }
        let (n, d) = av.rows_cols();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, x) in out.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let rg = self.requires(a);
        self.push(Array::vector(out), rg, Op::MeanRows(a), "mean_rows")
    }

    /// Max along `axis`. Rank-1 arrays accept axis 0 (→ scalar); rank-2 accept
    /// axis 1 (→ per-row maxima). Ties route the gradient to the lowest index.
    pub fn max_over_axis(&mut self, a: Tid, axis: usize) -> Result<Tid> {
        let av = self.value(a);
        let v = match (av.rank(), axis) {
            (1, 0) => {
                let m = av.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Array::scalar(m)
            }
            (2, 1) => {
                let (n, _) = av.rows_cols();
                let mut out = Vec::with_capacity(n);
                for r in 0..n {
                    out.push(av.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                }
                Array::vector(out)
            }
            _ => {
                return Err(HnrError::Shape { op: "max_over_axis", left: av.shape().to_vec(), right: vec![axis] })
            }
        };
        let rg = self.requires(a);
        self.push(v, rg, Op::MaxOverAxis(a, axis), "max_over_axis")
    }

    /// Softmax along the last axis (rows of a matrix, or a whole vector).
    pub fn softmax(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        let (n, d) = av.rows_cols();
        let mut out = av.clone();
        for r in 0..n {
            let row = &mut out.data_mut()[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::Softmax(a), "softmax")
    }

    /// log(softmax(x)) for a vector, numerically stable.
    pub fn log_softmax(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        if av.rank() != 1 {
            return Err(HnrError::Shape { op: "log_softmax", left: av.shape().to_vec(), right: vec![] });
        }
        let m = av.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + av.data().iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let v = av.map(|x| x - lse);
        let rg = self.requires(a);
        self.push(v, rg, Op::LogSoftmax(a), "log_softmax")
    }

    /// Normalize along the last axis: (x − μ)/√(σ² + ε), no affine part.
    pub fn layer_norm(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        let (n, d) = av.rows_cols();
        let mut out = av.clone();
        for r in 0..n {
            let row = &mut out.data_mut()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * rstd;
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::LayerNorm(a), "layer_norm")
    }

    /// Concatenate along `axis` (0 = rows, 1 = cols).
    pub fn concat(&mut self, parts: &[Tid], axis: usize) -> Result<Tid> {
        assert!(!parts.is_empty(), "concat of nothing");
        let v = match axis {
            0 => {
                let first = self.value(parts[0]);
                if first.rank() == 1 {
                    let mut data = Vec::new();
                    for &p in parts {
                        let pv = self.value(p);
                        if pv.rank() != 1 {
                            return Err(HnrError::Shape {
                                op: "concat",
                                left: first.shape().to_vec(),
                                right: pv.shape().to_vec(),
                            });
                        }
                        data.extend_from_slice(pv.data());
                    }
                    Array::vector(data)
                } else {
                    let cols = first.shape()[1];
                    let mut rows = 0;
                    let mut data = Vec::new();
                    for &p in parts {
                        let pv = self.value(p);
                        if pv.rank() != 2 || pv.shape()[1] != cols {
                            return Err(HnrError::Shape {
                                op: "concat",
                                left: first.shape().to_vec(),
                                right: pv.shape().to_vec(),
                            });
                        }
                        rows += pv.shape()[0];
                        data.extend_from_slice(pv.data());
                    }
                    Array::matrix(rows, cols, data)
                }
            }
            1 => {
                let rows = self.value(parts[0]).rows_cols().0;
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).rows_cols().1).collect();
                let total: usize = widths.iter().sum();
                let mut data = vec![0.0; rows * total];
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let pv = self.value(p);
                    if pv.rows_cols().0 != rows {
                        return Err(HnrError::Shape {
                            op: "concat",
                            left: vec![rows],
                            right: pv.shape().to_vec(),
                        });
                    }
                    for r in 0..rows {
                        data[r * total + off..r * total + off + w]
                            .copy_from_slice(&pv.data()[r * w..(r + 1) * w]);
                    }
                    off += w;
                }
                Array::matrix(rows, total, data)
            }
            _ => {
                return Err(HnrError::Shape { op: "concat", left: vec![axis], right: vec![] });
            }
        };
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(v, rg, Op::Concat(parts.to_vec(), axis), "concat")
    }

    /// Rows of a matrix, or elements of a vector.
    pub fn slice_rows(&mut self, a: Tid, r0: usize, r1: usize) -> Result<Tid> {
        let av = self.value(a);
        let (n, d) = slice_dims(av);
        if r1 > n || r0 >= r1 {
            return Err(HnrError::Shape { op: "slice_rows", left: av.shape().to_vec(), right: vec![r0, r1] });
        }
        let data = av.data()[r0 * d..r1 * d].to_vec();
        let v = if av.rank() == 1 { Array::vector(data) } else { Array::matrix(r1 - r0, d, data) };
        let rg = self.requires(a);
        self.push(v, rg, Op::SliceRows(a, r0, r1), "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Tid, c0: usize, c1: usize) -> Result<Tid> {
        let av = self.value(a);
        let (n, d) = av.rows_cols();
        if c1 > d || c0 >= c1 {
            return Err(HnrError::Shape { op: "slice_cols", left: av.shape().to_vec(), right: vec![c0, c1] });
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&av.data()[r * d + c0..r * d + c1]);
        }
        let v = if av.rank() == 1 { Array::vector(data) } else { Array::matrix(n, w, data) };
        let rg = self.requires(a);
        self.push(v, rg, Op::SliceCols(a, c0, c1), "slice_cols")
    }

    pub fn transpose(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(HnrError::Shape { op: "transpose", left: av.shape().to_vec(), right: vec![] });
        }
        let (n, d) = av.rows_cols();
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                data[c * n + r] = av.data()[r * d + c];
            }
        }
        let rg = self.requires(a);
        self.push(Array::matrix(d, n, data), rg, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Tid, shape: Vec<usize>) -> Result<Tid> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(HnrError::Shape { op: "reshape", left: av.shape().to_vec(), right: shape });
        }
        let v = av.clone().reshaped(shape);
        let rg = self.requires(a);
        self.push(v, rg, Op::Reshape(a), "reshape")
    }

    /// Cosine similarity of two vectors → scalar. Zero-norm input is a fault.
    pub fn cosine_similarity(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() || av.rank() != 1 {
            return Err(HnrError::Shape {
                op: "cosine_similarity",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let na = av.norm();
        let nb = bv.norm();
        if na == 0.0 || nb == 0.0 {
            return Err(HnrError::NumericFault { op: "cosine_similarity" });
        }
        let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let v = Array::scalar(dot / (na * nb));
        let rg = self.requires(a) || self.requires(b);
        self.push(v, rg, Op::CosineSim(a, b), "cosine_similarity")
    }

    /// y_i = Σ_{j<i} x_j for a vector.
    pub fn cumsum_exclusive(&mut self, a: Tid) -> Result<Tid> {
        let av = self.value(a);
        if av.rank() != 1 {
            return Err(HnrError::Shape { op: "cumsum_exclusive", left: av.shape().to_vec(), right: vec![] });
        }
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(av.len());
        for &x in av.data() {
            out.push(acc);
            acc += x;
        }
        let rg = self.requires(a);
        self.push(Array::vector(out), rg, Op::CumsumExclusive(a), "cumsum_exclusive")
    }

    /// Gather rows of a [v,d] table → [len(ids), d]; gradient scatter-adds.
    pub fn select_rows(&mut self, table: Tid, ids: &[usize]) -> Result<Tid> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(HnrError::Shape { op: "select_rows", left: tv.shape().to_vec(), right: vec![] });
        }
        let (v, d) = tv.rows_cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(HnrError::Contract(format!("select_rows id {id} out of {v}")));
            }
            data.extend_from_slice(tv.row(id));
        }
        let rg = self.requires(table);
        self.push(Array::matrix(ids.len(), d, data), rg, Op::SelectRows(table, ids.to_vec()), "select_rows")
    }

    pub(crate) fn backprop_op(&mut self, i: usize, gout: &Array, local: &mut [Option<Array>]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                if self.requires(a) {
                    Self::accumulate(local, a, gout.clone());
                }
                if self.requires(b) {
                    Self::accumulate(local, b, reduce_to(gout, self.shape(b)));
                }
            }
            Op::Sub(a, b) => {
                if self.requires(a) {
                    Self::accumulate(local, a, gout.clone());
                }
                if self.requires(b) {
                    let gneg = gout.map(|x| -x);
                    Self::accumulate(local, b, reduce_to(&gneg, self.shape(b)));
                }
            }
            Op::Mul(a, b) => {
                if self.requires(a) {
                    let bb = broadcast_like(self.value(b), self.value(a));
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(bb.data()) {
                        *x *= y;
                    }
                    Self::accumulate(local, a, g);
                }
                if self.requires(b) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.value(a).data()) {
                        *x *= y;
                    }
                    Self::accumulate(local, b, reduce_to(&g, self.shape(b)));
                }
            }
            Op::Div(a, b) => {
                let bb = broadcast_like(self.value(b), self.value(a));
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(bb.data()) {
                        *x /= y;
                    }
                    Self::accumulate(local, a, g);
                }
                if self.requires(b) {
                    let av = self.value(a);
                    let mut g = gout.clone();
                    for ((x, y), z) in g.data_mut().iter_mut().zip(av.data()).zip(bb.data()) {
                        *x *= -y / (z * z);
                    }
                    Self::accumulate(local, b, reduce_to(&g, self.shape(b)));
                }
            }
            Op::Neg(a) => {
                if self.requires(a) {
                    Self::accumulate(local, a, gout.map(|x| -x));
                }
            }
            Op::Scale(a, s) => {
                if self.requires(a) {
                    Self::accumulate(local, a, gout.map(|x| x * s));
                }
            }
            Op::AddScalar(a) => {
                if self.requires(a) {
                    Self::accumulate(local, a, gout.clone());
                }
            }
            Op::Matmul(a, b) => {
                let (n, k) = self.value(a).rows_cols();
                let (_, m) = {
                    let bv = self.value(b);
                    match bv.rank() {
                        1 => (bv.shape()[0], 1),
                        _ => bv.rows_cols(),
                    }
                };
                if self.requires(a) {
                    // dA = dO · Bᵀ
                    let data = Array::matmul_nt(gout.data(), self.value(b).data(), n, m, k);
                    Self::accumulate(local, a, Array::from_vec(self.shape(a).to_vec(), data));
                }
                if self.requires(b) {
                    // dB = Aᵀ · dO
                    let data = Array::matmul_tn(self.value(a).data(), gout.data(), n, k, m);
                    Self::accumulate(local, b, Array::from_vec(self.shape(b).to_vec(), data));
                }
            }
            Op::Exp(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *x *= y;
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Log(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.value(a).data()) {
                        *x /= y;
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Tanh(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *x *= 1.0 - y * y;
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Relu(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.value(a).data()) {
                        if *y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Softplus(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.value(a).data()) {
                        *x *= sigmoid(*y);
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *x *= y * (1.0 - y);
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Sqrt(a) => {
                if self.requires(a) {
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *x *= 0.5 / y;
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::SumAll(a) => {
                if self.requires(a) {
                    let g = Array::full(self.shape(a).to_vec(), gout.data()[0]);
                    Self::accumulate(local, a, g);
                }
            }
            Op::MeanAll(a) => {
                if self.requires(a) {
                    let n = self.value(a).len() as f64;
                    let g = Array::full(self.shape(a).to_vec(), gout.data()[0] / n);
                    Self::accumulate(local, a, g);
                }
            }
            Op::MeanRows(a) => {
                if self.requires(a) {
                    let (n, d) = self.value(a).rows_cols();
                    let mut g = Array::zeros(vec![n, d]);
                    for r in 0..n {
                        for (x, y) in g.data_mut()[r * d..(r + 1) * d].iter_mut().zip(gout.data()) {
                            *x = y / n as f64;
                        }
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::MaxOverAxis(a, axis) => {
                if self.requires(a) {
                    let av = self.value(a);
                    let mut g = Array::zeros(av.shape().to_vec());
                    match (av.rank(), axis) {
                        (1, 0) => {
                            let idx = argmax(av.data());
                            g.data_mut()[idx] = gout.data()[0];
                        }
                        (2, 1) => {
                            let (n, d) = av.rows_cols();
                            for r in 0..n {
                                let idx = argmax(av.row(r));
                                g.data_mut()[r * d + idx] = gout.data()[r];
                            }
                        }
                        _ => unreachable!(),
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Softmax(a) => {
                if self.requires(a) {
                    let y = &self.nodes[i].value;
                    let (n, d) = y.rows_cols();
                    let mut g = Array::zeros(y.shape().to_vec());
                    for r in 0..n {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &gout.data()[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in
                            g.data_mut()[r * d..(r + 1) * d].iter_mut().zip(yr).zip(gr)
                        {
                            *o = yv * (gv - dot);
                        }
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::LogSoftmax(a) => {
                if self.requires(a) {
                    let y = &self.nodes[i].value;
                    let gsum: f64 = gout.data().iter().sum();
                    let mut g = gout.clone();
                    for (x, y) in g.data_mut().iter_mut().zip(y.data()) {
                        *x -= y.exp() * gsum;
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::LayerNorm(a) => {
                if self.requires(a) {
                    let av = self.value(a);
                    let (n, d) = av.rows_cols();
                    let y = &self.nodes[i].value;
                    let mut g = Array::zeros(av.shape().to_vec());
                    for r in 0..n {
                        let xr = &av.data()[r * d..(r + 1) * d];
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &gout.data()[r * d..(r + 1) * d];
                        let mean = xr.iter().sum::<f64>() / d as f64;
                        let var = xr.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                        let rstd = 1.0 / (var + LN_EPS).sqrt();
                        let gmean = gr.iter().sum::<f64>() / d as f64;
                        let gydot = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, &gv), &yv) in
                            g.data_mut()[r * d..(r + 1) * d].iter_mut().zip(gr).zip(yr)
                        {
                            *o = rstd * (gv - gmean - yv * gydot);
                        }
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Concat(parts, axis) => match axis {
                0 => {
                    let mut row_off = 0;
                    for p in parts {
                        let pv = self.value(p);
                        let rows = if pv.rank() == 1 { pv.len() } else { pv.shape()[0] };
                        let cols = if pv.rank() == 1 { 1 } else { pv.shape()[1] };
                        if self.requires(p) {
                            let data =
                                gout.data()[row_off * cols..(row_off + rows) * cols].to_vec();
                            Self::accumulate(local, p, Array::from_vec(pv.shape().to_vec(), data));
                        }
                        row_off += rows;
                    }
                }
                _ => {
                    let rows = gout.rows_cols().0;
                    let total = gout.rows_cols().1;
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(p);
                        let w = pv.rows_cols().1;
                        if self.requires(p) {
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                data.extend_from_slice(
                                    &gout.data()[r * total + off..r * total + off + w],
                                );
                            }
                            Self::accumulate(local, p, Array::from_vec(pv.shape().to_vec(), data));
                        }
                        off += w;
                    }
                }
            },
            Op::SliceRows(a, r0, _r1) => {
                if self.requires(a) {
                    let av = self.value(a);
                    let (_, d) = slice_dims(av);
                    let mut g = Array::zeros(av.shape().to_vec());
                    g.data_mut()[r0 * d..r0 * d + gout.len()].copy_from_slice(gout.data());
                    Self::accumulate(local, a, g);
                }
            }
            Op::SliceCols(a, c0, c1) => {
                if self.requires(a) {
                    let av = self.value(a);
                    let (n, d) = av.rows_cols();
                    let w = c1 - c0;
                    let mut g = Array::zeros(av.shape().to_vec());
                    for r in 0..n {
                        g.data_mut()[r * d + c0..r * d + c1]
                            .copy_from_slice(&gout.data()[r * w..(r + 1) * w]);
                    }
                    Self::accumulate(local, a, g);
                }
            }
            Op::Transpose(a) => {
                if self.requires(a) {
                    let (n, d) = self.value(a).rows_cols();
                    let mut data = vec![0.0; n * d];
                    for r in 0..d {
                        for c in 0..n {
                            data[c * d + r] = gout.data()[r * n + c];
                        }
                    }
                    Self::accumulate(local, a, Array::matrix(n, d, data));
                }
            }
            Op::Reshape(a) => {
                if self.requires(a) {
                    let g = gout.clone().reshaped(self.shape(a).to_vec());
                    Self::accumulate(local, a, g);
                }
            }
            Op::CosineSim(a, b) => {
                let av = self.value(a).clone();
                let bv = self.value(b).clone();
                let na = av.norm();
                let nb = bv.norm();
                let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
                let c = dot / (na * nb);
                let go = gout.data()[0];
                if self.requires(a) {
                    let g: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &y)| go * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    Self::accumulate(local, a, Array::from_vec(av.shape().to_vec(), g));
                }
                if self.requires(b) {
                    let g: Vec<f64> = bv
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&y, &x)| go * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    Self::accumulate(local, b, Array::from_vec(bv.shape().to_vec(), g));
                }
            }
            Op::CumsumExclusive(a) => {
                if self.requires(a) {
                    // dx_i = Σ_{j>i} dy_j
                    let mut acc = 0.0;
                    let n = gout.len();
                    let mut g = vec![0.0; n];
                    for j in (0..n).rev() {
                        g[j] = acc;
                        acc += gout.data()[j];
                    }
                    Self::accumulate(local, a, Array::vector(g));
                }
            }
            Op::SelectRows(table, ids) => {
                if self.requires(table) {
                    let tv = self.value(table);
                    let (_, d) = tv.rows_cols();
                    let mut g = Array::zeros(tv.shape().to_vec());
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in g.data_mut()[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&gout.data()[r * d..(r + 1) * d])
                        {
                            *x += y;
                        }
                    }
                    Self::accumulate(local, table, g);
                }
            }
        }
        Ok(())
    }
}

/// (rows, row-width) for slicing: vectors slice per element.
fn slice_dims(a: &Array) -> (usize, usize) {
    if a.rank() == 1 {
        (a.len(), 1)
    } else {
        a.rows_cols()
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

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Materialize a broadcast operand at the full shape of `like`.
fn broadcast_like(b: &Array, like: &Array) -> Array {
    if b.shape() == like.shape() {
        return b.clone();
    }
    if b.len() == 1 {
        return Array::full(like.shape().to_vec(), b.data()[0]);
    }
    let (rows, cols) = like.rows_cols();
    let mut out = Array::zeros(like.shape().to_vec());
    for r in 0..rows {
        out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(b.data());
    }
    out
}
