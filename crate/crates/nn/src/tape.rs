//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar (1×1) node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that
//! requires one. Batches are rows; features are columns.

use ndarray::{Array2, Axis, Zip};

use crate::error::{NnError, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    RowNormalize(Var),
    MatMulNt(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    InfoNce {
        logits: Var,
        positives: Vec<usize>,
        member: Array2<bool>,
    },
    GaussianLogProb {
        mean: Var,
        log_std: Var,
        actions: Matrix,
    },
    PpoClip {
        log_prob: Var,
        old_log_prob: Vec<f64>,
        advantages: Vec<f64>,
        clip: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[var.0]),
        }
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<Matrix> {
        vars.iter().map(|v| self.get_or_zeros(*v)).collect()
    }
}

fn shape(m: &Matrix) -> Vec<usize> {
    m.shape().to_vec()
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is wanted (a trainable parameter or probed input).
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Matrix, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    /// `x · wᵀ + b` with `x: n×in`, `w: out×in`, `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.ncols() {
            return Err(NnError::Shape {
                context: "linear input",
                expected: vec![xv.nrows(), wv.ncols()],
                got: shape(xv),
            });
        }
        if bv.nrows() != 1 || bv.ncols() != wv.nrows() {
            return Err(NnError::Shape {
                context: "linear bias",
                expected: vec![1, wv.nrows()],
                got: shape(bv),
            });
        }
        let mut out = xv.dot(&wv.t());
        out += bv;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(NnError::Shape {
                context,
                expected: shape(self.value(a)),
                got: shape(self.value(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds the 1×d row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(NnError::Shape {
                context: "add_row",
                expected: vec![1, av.ncols()],
                got: shape(rv),
            });
        }
        let out = av + rv;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v * v);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(NnError::Contract("concat of zero blocks".into()));
        };
        let rows = self.value(*first).nrows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.nrows() != rows {
                return Err(NnError::Shape {
                    context: "concat",
                    expected: vec![rows, v.ncols()],
                    got: shape(v),
                });
            }
            cols += v.ncols();
        }
        let mut out = Matrix::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.ncols() {
            return Err(NnError::Contract(format!(
                "slice {start}..{end} out of range for {} columns",
                v.ncols()
            )));
        }
        let out = v.slice(ndarray::s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_FLOOR);
            row /= n;
        }
        let rg = self.rg(a);
        self.push(out, Op::RowNormalize(a), rg)
    }

    /// `a · bᵀ`; with unit rows this is the cosine-similarity matrix.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(NnError::Shape {
                context: "matmul_nt",
                expected: vec![bv.nrows(), av.ncols()],
                got: shape(bv),
            });
        }
        let out = av.dot(&bv.t());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Matrix::from_elem((1, 1), v.sum() / v.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Sums each row: `n×d → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Mean InfoNCE over rows of `logits`.
    ///
    /// Row `i` scores `logits[i, positives[i]]` against the log-sum-exp of the
    /// entries with `member[i, k] == true`. Whether the positive itself is a
    /// member of the denominator is up to the caller.
    pub fn info_nce(
        &mut self,
        logits: Var,
        positives: Vec<usize>,
        member: Array2<bool>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if member.dim() != lv.dim() || positives.len() != lv.nrows() {
            return Err(NnError::Shape {
                context: "info_nce",
                expected: shape(lv),
                got: member.shape().to_vec(),
            });
        }
        let n = lv.nrows();
        if n == 0 {
            return Err(NnError::Contract("info_nce over an empty batch".into()));
        }
        let mut total = 0.0;
        for (i, row) in lv.rows().into_iter().enumerate() {
            let p = positives[i];
            if p >= row.len() {
                return Err(NnError::Contract(format!("positive index {p} out of range")));
            }
            let lse = masked_logsumexp(row.iter().copied(), member.row(i).iter().copied())
                .ok_or_else(|| NnError::Contract(format!("row {i} has an empty denominator")))?;
            total += lse - row[p];
        }
        let out = Matrix::from_elem((1, 1), total / n as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::InfoNce {
                logits,
                positives,
                member,
            },
            rg,
        ))
    }

    /// Per-row diagonal-Gaussian log density of `actions` (`n×1`).
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, actions: Matrix) -> Result<Var> {
        let (mv, sv) = (self.value(mean), self.value(log_std));
        if mv.dim() != actions.dim() || sv.nrows() != 1 || sv.ncols() != mv.ncols() {
            return Err(NnError::Shape {
                context: "gaussian_log_prob",
                expected: shape(mv),
                got: shape(&actions),
            });
        }
        let d = mv.ncols() as f64;
        let mut out = Matrix::zeros((mv.nrows(), 1));
        let log_norm = 0.5 * d * (2.0 * std::f64::consts::PI).ln();
        let sum_log_std: f64 = sv.sum();
        for i in 0..mv.nrows() {
            let mut acc = 0.0;
            for k in 0..mv.ncols() {
                let z = (actions[[i, k]] - mv[[i, k]]) * (-sv[[0, k]]).exp();
                acc += z * z;
            }
            out[[i, 0]] = -0.5 * acc - sum_log_std - log_norm;
        }
        let rg = self.rg(mean) || self.rg(log_std);
        Ok(self.push(
            out,
            Op::GaussianLogProb {
                mean,
                log_std,
                actions,
            },
            rg,
        ))
    }

    /// Clipped PPO surrogate, returned as a loss to minimize:
    /// `-(1/n) Σ min(ρ A, clip(ρ, 1-ε, 1+ε) A)` with `ρ = exp(log_prob - old)`.
    pub fn ppo_clip(
        &mut self,
        log_prob: Var,
        old_log_prob: Vec<f64>,
        advantages: Vec<f64>,
        clip: f64,
    ) -> Result<Var> {
        let lv = self.value(log_prob);
        let n = lv.nrows();
        if lv.ncols() != 1 || old_log_prob.len() != n || advantages.len() != n || n == 0 {
            return Err(NnError::Shape {
                context: "ppo_clip",
                expected: vec![old_log_prob.len(), 1],
                got: shape(lv),
            });
        }
        let mut total = 0.0;
        for i in 0..n {
            total += clipped_objective(lv[[i, 0]] - old_log_prob[i], advantages[i], clip).0;
        }
        let out = Matrix::from_elem((1, 1), -total / n as f64);
        let rg = self.rg(log_prob);
        Ok(self.push(
            out,
            Op::PpoClip {
                log_prob,
                old_log_prob,
                advantages,
                clip,
            },
            rg,
        ))
    }

    /// Gradients of the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(NnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.dot(self.value(*w)));
                }
                if self.rg(*w) {
                    self.accumulate(grads, *w, g.t().dot(self.value(*x)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*x))
                    .for_each(|d, &xv| {
                        if xv <= 0.0 {
                            *d = 0.0
                        }
                    });
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g * out),
            Op::Square(a) => self.accumulate(grads, *a, g * self.value(*a) * 2.0),
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice(ndarray::s![.., at..at + w]).to_owned());
                    }
                    at += w;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                d.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                    .assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.dim());
                for i in 0..x.nrows() {
                    let xr = x.row(i);
                    let n = xr.dot(&xr).sqrt().max(NORM_FLOOR);
                    let yr = out.row(i);
                    let gr = g.row(i);
                    let proj = yr.dot(&gr);
                    let mut dr = d.row_mut(i);
                    for k in 0..x.ncols() {
                        dr[k] = (gr[k] - yr[k] * proj) / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Sum(a) => {
                let s = g[[0, 0]];
                self.accumulate(grads, *a, Matrix::from_elem(self.value(*a).dim(), s));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let s = g[[0, 0]] / v.len().max(1) as f64;
                self.accumulate(grads, *a, Matrix::from_elem(v.dim(), s));
            }
            Op::SumCols(a) => {
                let v = self.value(*a);
                let mut d = Matrix::zeros(v.dim());
                for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                    row.fill(g[[i, 0]]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::InfoNce {
                logits,
                positives,
                member,
            } => {
                let lv = self.value(*logits);
                let n = lv.nrows() as f64;
                let scale = g[[0, 0]] / n;
                let mut d = Matrix::zeros(lv.dim());
                for i in 0..lv.nrows() {
                    let row = lv.row(i);
                    let mrow = member.row(i);
                    let max = row
                        .iter()
                        .zip(mrow.iter())
                        .filter(|(_, &m)| m)
                        .map(|(v, _)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row
                        .iter()
                        .zip(mrow.iter())
                        .filter(|(_, &m)| m)
                        .map(|(v, _)| (v - max).exp())
                        .sum();
                    for k in 0..row.len() {
                        if mrow[k] {
                            d[[i, k]] += scale * (row[k] - max).exp() / denom;
                        }
                    }
                    d[[i, positives[i]]] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::GaussianLogProb {
                mean,
                log_std,
                actions,
            } => {
                let mv = self.value(*mean);
                let sv = self.value(*log_std);
                let mut dm = Matrix::zeros(mv.dim());
                let mut ds = Matrix::zeros(sv.dim());
                for i in 0..mv.nrows() {
                    let gi = g[[i, 0]];
                    for k in 0..mv.ncols() {
                        let inv_var = (-2.0 * sv[[0, k]]).exp();
                        let diff = actions[[i, k]] - mv[[i, k]];
                        dm[[i, k]] = gi * diff * inv_var;
                        ds[[0, k]] += gi * (diff * diff * inv_var - 1.0);
                    }
                }
                self.accumulate(grads, *mean, dm);
                self.accumulate(grads, *log_std, ds);
            }
            Op::PpoClip {
                log_prob,
                old_log_prob,
                advantages,
                clip,
            } => {
                let lv = self.value(*log_prob);
                let n = lv.nrows() as f64;
                let mut d = Matrix::zeros(lv.dim());
                for i in 0..lv.nrows() {
                    let (_, slope) = clipped_objective(lv[[i, 0]] - old_log_prob[i], advantages[i], *clip);
                    d[[i, 0]] = -g[[0, 0]] * slope / n;
                }
                self.accumulate(grads, *log_prob, d);
            }
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// `(value, d value / d log_ratio)` of `min(ρA, clip(ρ)A)`.
pub fn clipped_objective(log_ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let ratio = log_ratio.exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

fn masked_logsumexp(
    values: impl Iterator<Item = f64> + Clone,
    mask: impl Iterator<Item = bool> + Clone,
) -> Option<f64> {
    let max = values
        .clone()
        .zip(mask.clone())
        .filter(|(_, m)| *m)
        .map(|(v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = values
        .zip(mask)
        .filter(|(_, m)| *m)
        .map(|(v, _)| (v - max).exp())
        .sum();
    Some(max + s.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let p = t.param(array![[1.0, 2.0]]);
        let c = t.constant(array![[3.0]]);
        let zero = t.scale(p, 0.0);
        let s = t.sum(zero);
        let loss = t.add(s, c).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get_or_zeros(p), array![[0.0, 0.0]]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let p = t.param(array![[1.0, 2.0]]);
        assert!(matches!(t.backward(p), Err(NnError::Contract(_))));
    }

    #[test]
    fn squared_norm_of_linear_map_matches_analytic_gradient() {
        // L = ||W x||², dL/dW = 2 (W x) xᵀ.
        let w0 = array![[1.0, -2.0, 0.5], [0.3, 0.7, -1.1]];
        let x0 = array![[0.4, -0.9, 1.3]];
        let mut t = Tape::new();
        let w = t.param(w0.clone());
        let x = t.constant(x0.clone());
        let b = t.constant(Matrix::zeros((1, 2)));
        let y = t.linear(x, w, b).unwrap();
        let sq = t.square(y);
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        let wx = x0.dot(&w0.t());
        let expected = wx.t().dot(&x0) * 2.0;
        let got = g.get(w).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_ratio_outside_band_has_zero_slope() {
        // A > 0 and ρ above 1+ε: the clipped branch is the minimum.
        assert_eq!(clipped_objective(0.5, 1.0, 0.2).1, 0.0);
        // A < 0 and ρ below 1-ε.
        assert_eq!(clipped_objective(-0.5, -1.0, 0.2).1, 0.0);
        // Inside the band the slope is ρA.
        let (v, s) = clipped_objective(0.1, 2.0, 0.2);
        assert!((v - 0.1f64.exp() * 2.0).abs() < 1e-15);
        assert_eq!(v, s);
    }

    #[test]
    fn info_nce_rejects_empty_denominator() {
        let mut t = Tape::new();
        let l = t.param(array![[1.0, 2.0]]);
        let member = Array2::from_elem((1, 2), false);
        assert!(t.info_nce(l, vec![0], member).is_err());
    }
}
