use crate::error::{Error, Result};

use super::matrix::{log_softmax_rows, Matrix};

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    KlCategorical(Var, Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Gather(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    Detach,
    Argmax,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Argmax => "argmax",
            _ => "op",
        }
    }
}

/// Reverse-mode autodiff tape over dense matrices.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A value that is treated as a constant by `backward`.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Detach, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Adds the `1×k` row `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not fit {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(Op::AddBias(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "min")?;
        let v = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(Op::Min(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a)).map(f64::exp);
        self.push(Op::Softmax(a), v)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a), v)
    }

    /// Row-wise `KL(p ‖ q)` from log-probabilities, as an `n×1` column.
    pub fn kl_categorical(&mut self, log_p: Var, log_q: Var) -> Result<Var> {
        let (lp, lq) = (self.value(log_p), self.value(log_q));
        same_shape(lp, lq, "kl")?;
        let mut out = Vec::with_capacity(lp.rows());
        for r in 0..lp.rows() {
            out.push(
                lp.row(r)
                    .iter()
                    .zip(lq.row(r))
                    .map(|(&a, &b)| if a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) })
                    .sum(),
            );
        }
        Ok(self.push(Op::KlCategorical(log_p, log_q), Matrix::column(out)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.data().len().max(1) as f64;
        let v = Matrix::scalar(m.data().iter().sum::<f64>() / n);
        self.push(Op::Mean(a), v)
    }

    /// Sums each row, giving an `n×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::column((0..m.rows()).map(|r| m.row(r).iter().sum()).collect());
        self.push(Op::SumCols(a), v)
    }

    /// Picks `a[r, idx[r]]` for every row, giving an `n×1` column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if idx.len() != m.rows() || idx.iter().any(|&c| c >= m.cols()) {
            return Err(Error::Shape(format!(
                "gather of {} indices from {:?}",
                idx.len(),
                m.shape()
            )));
        }
        let v = Matrix::column(idx.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect());
        Ok(self.push(Op::Gather(a, idx.to_vec()), v))
    }

    /// Copies the listed rows; rows may repeat.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if rows.iter().any(|&r| r >= m.rows()) {
            return Err(Error::Shape(format!("row index out of range for {:?}", m.shape())));
        }
        let v = m.select_rows(rows);
        Ok(self.push(Op::SelectRows(a, rows.to_vec()), v))
    }

    /// Value of `a` with the gradient path cut.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(Op::Detach, v)
    }

    /// Row-wise argmax as an `n×1` column of indices. Not differentiable.
    pub fn argmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::column(
            (0..m.rows())
                .map(|r| {
                    let row = m.row(r);
                    (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best }) as f64
                })
                .collect(),
        );
        self.push(Op::Argmax, v)
    }

    /// Gradients of the `1×1` node `out` with respect to every earlier node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Matrix::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let y = &self.values[i];
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &self.ops[i] {
                Op::Leaf | Op::Detach => {}
                Op::Argmax => return Err(Error::UnsupportedOp(self.ops[i].name())),
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_nt(&self.values[b.0]));
                    acc(*b, self.values[a.0].matmul_tn(&g));
                }
                Op::AddBias(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        db.data_mut().iter_mut().zip(g.row(r)).for_each(|(d, x)| *d += x);
                    }
                    acc(*b, db);
                    acc(*a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(&self.values[b.0], |x, y| x * y));
                    acc(*b, g.zip_map(&self.values[a.0], |x, y| x * y));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    let pick_a = av.zip_map(bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                    acc(*a, g.zip_map(&pick_a, |x, m| x * m));
                    acc(*b, g.zip_map(&pick_a, |x, m| x * (1.0 - m)));
                }
                Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Tanh(a) => acc(*a, g.zip_map(y, |x, t| x * (1.0 - t * t))),
                Op::Relu(a) => {
                    let d = g.zip_map(&self.values[a.0], |x, z| if z > 0.0 { x } else { 0.0 });
                    acc(*a, d)
                }
                Op::Exp(a) => acc(*a, g.zip_map(y, |x, e| x * e)),
                Op::Log(a) => acc(*a, g.zip_map(&self.values[a.0], |x, z| x / z)),
                Op::Square(a) => acc(*a, g.zip_map(&self.values[a.0], |x, z| 2.0 * x * z)),
                Op::Softmax(a) => {
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                        for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                            *out = y.get(r, c) * (g.get(r, c) - dot);
                        }
                    }
                    acc(*a, d)
                }
                Op::LogSoftmax(a) => {
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                            *out = g.get(r, c) - y.get(r, c).exp() * total;
                        }
                    }
                    acc(*a, d)
                }
                Op::KlCategorical(lp, lq) => {
                    // d/dlp_j = p_j (lp_j - lq_j + 1), d/dlq_j = -p_j
                    let (pv, qv) = (&self.values[lp.0], &self.values[lq.0]);
                    let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                    let mut dq = Matrix::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        let gr = g.get(r, 0);
                        for c in 0..pv.cols() {
                            let (a, b) = (pv.get(r, c), qv.get(r, c));
                            if a == f64::NEG_INFINITY {
                                continue;
                            }
                            let p = a.exp();
                            dp.set(r, c, gr * p * (a - b + 1.0));
                            dq.set(r, c, -gr * p);
                        }
                    }
                    acc(*lp, dp);
                    acc(*lq, dq);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = g.zip_map(&self.values[a.0], |x, z| if z >= *lo && z <= *hi { x } else { 0.0 });
                    acc(*a, d)
                }
                Op::Sum(a) => {
                    let (r, c) = self.values[a.0].shape();
                    acc(*a, Matrix::filled(r, c, g.item()))
                }
                Op::Mean(a) => {
                    let (r, c) = self.values[a.0].shape();
                    acc(*a, Matrix::filled(r, c, g.item() / (r * c).max(1) as f64))
                }
                Op::SumCols(a) => {
                    let (r, c) = self.values[a.0].shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i).iter_mut().for_each(|x| *x = g.get(i, 0));
                    }
                    acc(*a, d)
                }
                Op::Gather(a, idx) => {
                    let (r, c) = self.values[a.0].shape();
                    let mut d = Matrix::zeros(r, c);
                    for (row, &col) in idx.iter().enumerate() {
                        d.set(row, col, g.get(row, 0));
                    }
                    acc(*a, d)
                }
                Op::SelectRows(a, rows) => {
                    let (r, c) = self.values[a.0].shape();
                    let mut d = Matrix::zeros(r, c);
                    for (k, &src) in rows.iter().enumerate() {
                        d.row_mut(src).iter_mut().zip(g.row(k)).for_each(|(o, x)| *o += x);
                    }
                    acc(*a, d)
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.values.iter().map(Matrix::shape).collect(),
        })
    }
}
