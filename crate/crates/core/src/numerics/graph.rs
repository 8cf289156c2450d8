//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the primitive that produced it. [`Graph::backward`] walks the record
//! in reverse and returns the gradient of a scalar output with respect to
//! every node. Only the primitives needed by the encoder and the clustering
//! losses are supported.

use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};

/// Arguments of `log` are clamped below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    Mul(Var, Var),
    Relu(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    RowSoftmax(Var),
    RowNormalize(Var, Vec<f64>),
    Transpose(Var),
    SliceRows(Var, usize),
    ConcatRows(Var, Var),
    Sum(Var),
    RowSum(Var),
    ColMean(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn finite(value: Matrix, primitive: &'static str) -> Result<Matrix> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { primitive })
    }
}

fn shape_err(context: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::DimensionMismatch {
        context,
        expected: format!("{}x{}", a.rows(), a.cols()),
        got: format!("{}x{}", b.rows(), b.cols()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input node. Inputs and parameters are both leaves; gradients
    /// are reported for every leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = finite(self.value(a).matmul(self.value(b))?, "matmul")?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = finite(self.value(a).matmul_nt(self.value(b))?, "matmul_nt")?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    /// Adds a `1 x cols` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_bias", av, bv));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = finite(out, "add_bias")?;
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = finite(self.value(a).zip_map(self.value(b), |x, y| x + y)?, "add")?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = finite(self.value(a).scale(s), "scale")?;
        Ok(self.push(value, Op::Scale(a, s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = finite(self.value(a).map(|v| v + s), "add_scalar")?;
        Ok(self.push(value, Op::AddScalar(a)))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = finite(self.value(a).zip_map(&c, |x, y| x * y)?, "mul_const")?;
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    /// Elementwise product of two nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = finite(self.value(a).zip_map(self.value(b), |x, y| x * y)?, "mul")?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        Ok(self.push(finite(value, "softplus")?, Op::Softplus(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        Ok(self.push(value, Op::Tanh(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = finite(self.value(a).map(f64::exp), "exp")?;
        Ok(self.push(value, Op::Exp(a)))
    }

    /// Natural log with the argument clamped below at [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = finite(self.value(a).map(|v| v.max(LOG_CLAMP).ln()), "log")?;
        Ok(self.push(value, Op::Log(a)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        Ok(self.push(value, Op::Abs(a)))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = finite(out, "row_softmax")?;
        Ok(self.push(value, Op::RowSoftmax(a)))
    }

    /// Scales every row to unit length. A zero row is a degenerate vector.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                return Err(Error::DegenerateVector { row: i });
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let value = finite(out, "row_normalize")?;
        Ok(self.push(value, Op::RowNormalize(a, norms)))
    }

    /// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.row_normalize(a)?;
        let bn = if a == b { an } else { self.row_normalize(b)? };
        self.matmul_nt(an, bn)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(Error::DimensionMismatch {
                context: "slice_rows",
                expected: format!("range within {} rows", av.rows()),
                got: format!("{start}..{end}"),
            });
        }
        let value = av.slice_rows(start, end);
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).vstack(self.value(b))?;
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = finite(Matrix::filled(1, 1, self.value(a).sum()), "sum")?;
        Ok(self.push(value, Op::Sum(a)))
    }

    /// Row sums as an `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let sums: Vec<f64> = av.iter_rows().map(|r| r.iter().sum()).collect();
        let value = finite(Matrix::from_vec(av.rows(), 1, sums)?, "row_sum")?;
        Ok(self.push(value, Op::RowSum(a)))
    }

    /// Column means as a `1 x cols` row.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::Empty("col_mean over zero rows"));
        }
        let mut means = vec![0.0; av.cols()];
        for r in av.iter_rows() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = av.rows() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        let value = Matrix::from_vec(1, av.cols(), means)?;
        Ok(self.push(value, Op::ColMean(a)))
    }

    /// Gradients of the scalar `output` with respect to every leaf, indexed
    /// by [`Var::index`]. Interior nodes, and leaves that do not influence
    /// `output`, get `None`.
    pub fn backward(&self, output: Var) -> Result<Vec<Option<Matrix>>> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::DimensionMismatch {
                context: "backward",
                expected: "1x1 output".into(),
                got: format!("{}x{}", out_shape.0, out_shape.1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(a, bias) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in g.iter_rows() {
                        for (d, v) in db.iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, Matrix::from_vec(1, g.cols(), db)?);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y)?),
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))?),
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(y, |gv, e| gv * e)?),
                Op::Log(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| if x > LOG_CLAMP { gv / x } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| gv * x.signum() * f64::from(x != 0.0))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::RowSoftmax(a) => {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let yr = y.row(i);
                        let inner = dot(g.row(i), yr);
                        for (dv, (gv, yv)) in d.row_mut(i).iter_mut().zip(g.row(i).iter().zip(yr)) {
                            *dv = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowNormalize(a, norms) => {
                    let mut d = g.clone();
                    for (i, n) in norms.iter().enumerate() {
                        let yr = y.row(i);
                        let inner = dot(g.row(i), yr);
                        for (dv, (gv, yv)) in d.row_mut(i).iter_mut().zip(g.row(i).iter().zip(yr)) {
                            *dv = (gv - yv * inner) / n;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        d.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatRows(a, b) => {
                    let split = self.value(*a).rows();
                    accumulate(&mut grads, *a, g.slice_rows(0, split));
                    accumulate(&mut grads, *b, g.slice_rows(split, g.rows()));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::RowSum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::ColMean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let inv = 1.0 / r as f64;
                    accumulate(&mut grads, *a, Matrix::from_fn(r, c, |_, j| g[(0, j)] * inv));
                }
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { primitive: "backward" });
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
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
