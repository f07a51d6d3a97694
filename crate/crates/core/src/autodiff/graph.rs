//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so node order is already a
//! topological order. `backward` walks the tape once in reverse.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis. `Rows` collapses the row dimension (`r × c → 1 × c`),
/// `Cols` collapses the column dimension (`r × c → r × 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Gaussian kernel component used by [`Graph::pairwise_set_mmd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTerm {
    pub bandwidth: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, Axis),
    MeanAxis(Var, Axis),
    RowNorm(Var),
    Concat(Vec<Var>, Axis),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    PairwiseSqDist(Var, Var),
    PairwiseSetMmd(Var, usize, Vec<KernelTerm>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Accumulated gradient, or `None` if no path reached `var`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Result<Bcast> {
    let (r, c) = lhs.shape();
    match rhs.shape() {
        s if s == (r, c) => Ok(Bcast::Same),
        (1, 1) => Ok(Bcast::Scalar),
        (1, cc) if cc == c => Ok(Bcast::Row),
        (rr, 1) if rr == r => Ok(Bcast::Col),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: lhs.shape(),
            rhs: rhs.shape(),
        }),
    }
}

fn bcast_index(kind: Bcast, cols: usize, flat: usize) -> usize {
    match kind {
        Bcast::Same => flat,
        Bcast::Row => flat % cols,
        Bcast::Col => flat / cols,
        Bcast::Scalar => 0,
    }
}

fn binary_map(lhs: &Tensor, rhs: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = lhs.cols();
    let rd = rhs.data();
    let data = lhs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &a)| f(a, rd[bcast_index(kind, cols, i)]))
        .collect();
    Tensor::new(lhs.rows(), cols, data).expect("shape preserved")
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_to(kind: Bcast, full: &Tensor, target: (usize, usize)) -> Tensor {
    match kind {
        Bcast::Same => full.clone(),
        _ => {
            let mut out = Tensor::zeros(target.0, target.1);
            let cols = full.cols();
            let od = out.data_mut();
            for (i, &g) in full.data().iter().enumerate() {
                od[bcast_index(kind, cols, i)] += g;
            }
            out
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    par::for_each_row_mut(out.data_mut(), cols, cols * 4, |_, row| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        // Summing in sorted order makes the normalizer, and so the output,
        // exactly equivariant under column permutations.
        let mut sorted = row.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let total: f64 = sorted.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    par::for_each_row_mut(out.data_mut(), cols, cols * 4, |_, row| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    });
    out
}

fn multi_kernel(terms: &[KernelTerm], sq: f64) -> f64 {
    terms
        .iter()
        .map(|t| t.weight * (-sq / (2.0 * t.bandwidth * t.bandwidth)).exp())
        .sum()
}

/// `Σ_u w_u k_u(sq) / h_u²`, the scalar multiplying `-(u - v)` in ∂k/∂u.
fn multi_kernel_slope(terms: &[KernelTerm], sq: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let h2 = t.bandwidth * t.bandwidth;
            t.weight * (-sq / (2.0 * h2)).exp() / h2
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean kernel value between the `s` points of `a` and the `s` points of `b`.
fn set_kernel_mean(a: &[f64], b: &[f64], channels: usize, terms: &[KernelTerm]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for u in a.chunks(channels) {
        for v in b.chunks(channels) {
            acc += multi_kernel(terms, sq_dist(u, v));
            count += 1;
        }
    }
    acc / count as f64
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

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn check_finite_input(&self, name: &'static str, v: Var) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("input of {name}")))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push_checked("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise `a + b`; `b` may broadcast as a row, column, or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("add", self.value(a), self.value(b))?;
        let out = binary_map(self.value(a), self.value(b), kind, |x, y| x + y);
        self.push_checked("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("sub", self.value(a), self.value(b))?;
        let out = binary_map(self.value(a), self.value(b), kind, |x, y| x - y);
        self.push_checked("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("mul", self.value(a), self.value(b))?;
        let out = binary_map(self.value(a), self.value(b), kind, |x, y| x * y);
        self.push_checked("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("div", self.value(a), self.value(b))?;
        let out = binary_map(self.value(a), self.value(b), kind, |x, y| x / y);
        self.push_checked("div", out, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push_checked("scale", out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push_checked("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push_checked("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check_finite_input("log", a)?;
        let out = self.value(a).map(f64::ln);
        self.push_checked("log", out, Op::Log(a), &[a])
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::sqrt);
        self.push_checked("sqrt", out, Op::Sqrt(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_checked("relu", out, Op::Relu(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite_input("softmax", a)?;
        let out = softmax_rows(self.value(a));
        self.push_checked("softmax", out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite_input("log_softmax", a)?;
        let out = log_softmax_rows(self.value(a));
        self.push_checked("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_checked("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push_checked("mean", out, Op::Mean(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let out = reduce_axis(self.value(a), axis);
        self.push_checked("sum_axis", out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = self.value(a);
        let n = match axis {
            Axis::Rows => t.rows(),
            Axis::Cols => t.cols(),
        } as f64;
        let out = reduce_axis(t, axis).map(|v| v / n);
        self.push_checked("mean_axis", out, Op::MeanAxis(a, axis), &[a])
    }

    /// Euclidean norm of each row, `r × c → r × 1`.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::new(t.rows(), 1, data)?;
        self.push_checked("row_norm", out, Op::RowNorm(a), &[a])
    }

    /// Divides each row by its L2 norm. Errors on a zero row.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.row_norm(a)?;
        if self.value(n).data().iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("cannot normalize a zero-norm row"));
        }
        self.div(a, n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (r0, c0) = self.shape(first);
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != c0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: (r0, c0),
                            rhs: t.shape(),
                        });
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, c0, data)?
            }
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != r0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: (r0, c0),
                            rhs: t.shape(),
                        });
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
        };
        self.push_checked("concat", out, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push_checked("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).gather_rows(indices)?;
        self.push_checked("gather_rows", out, Op::GatherRows(a, indices.to_vec()), &[a])
    }

    /// `out[i][j] = ‖a_i − b_j‖²`, computed by direct differences so that
    /// identical rows give an exact zero.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::ShapeMismatch {
                op: "pairwise_sq_dist",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        let m = tb.rows();
        par::for_each_row_mut(out.data_mut(), m, m * ta.cols(), |i, row| {
            let ai = ta.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o = sq_dist(ai, tb.row(j));
            }
        });
        self.push_checked("pairwise_sq_dist", out, Op::PairwiseSqDist(a, b), &[a, b])
    }

    /// Instance-to-instance squared MMD. Row `i` of `a` is read as
    /// `cols / channels` points of dimension `channels`; entry `(i, j)` is the
    /// biased multi-kernel MMD² between the point sets of rows `i` and `j`.
    pub fn pairwise_set_mmd(&mut self, a: Var, channels: usize, terms: &[KernelTerm]) -> Result<Var> {
        let t = self.value(a);
        if channels == 0 || !t.cols().is_multiple_of(channels) {
            return Err(Error::invalid(format!(
                "feature width {} is not a multiple of {channels} channels",
                t.cols()
            )));
        }
        if terms.is_empty() || terms.iter().any(|k| k.bandwidth <= 0.0) {
            return Err(Error::invalid("set MMD needs positive kernel bandwidths"));
        }
        let b = t.rows();
        let selfk: Vec<f64> = par::map_range(b, |i| set_kernel_mean(t.row(i), t.row(i), channels, terms));
        let mut out = Tensor::zeros(b, b);
        par::for_each_row_mut(out.data_mut(), b, b * t.cols(), |i, row| {
            for (j, o) in row.iter_mut().enumerate() {
                *o = if i == j {
                    0.0
                } else {
                    selfk[i] + selfk[j] - 2.0 * set_kernel_mean(t.row(i), t.row(j), channels, terms)
                };
            }
        });
        self.push_checked(
            "pairwise_set_mmd",
            out,
            Op::PairwiseSetMmd(a, channels, terms.to_vec()),
            &[a],
        )
    }

    /// Reverse pass from `output`, seeded with ones (the gradient of `sum(output)`).
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let (r, c) = self.shape(output);
        grads[output.0] = Some(Tensor::ones(r, c));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[idx].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let kind = broadcast_kind("add", self.value(*a), self.value(*b))?;
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let gb = reduce_to(kind, g, self.shape(*b)).map(|v| sign * v);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let kind = broadcast_kind("mul", ta, tb)?;
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, binary_map(g, tb, kind, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    let full = g.zip_map(ta, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(kind, &full, tb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let kind = broadcast_kind("div", ta, tb)?;
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, binary_map(g, tb, kind, |x, y| x / y));
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let ob = binary_map(out, tb, kind, |o, y| -o / y);
                    let full = g.zip_map(&ob, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(kind, &full, tb.shape()));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Sqrt(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(out, |x, y| if y > 0.0 { 0.5 * x / y } else { 0.0 }),
            ),
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
            ),
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = y[k] * (gr[k] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let total: f64 = gr.iter().sum();
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = gr[k] - y[k].exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (r, c) = self.shape(*a);
                let scale = match (&self.nodes[idx].op, axis) {
                    (Op::MeanAxis(..), Axis::Rows) => 1.0 / r as f64,
                    (Op::MeanAxis(..), Axis::Cols) => 1.0 / c as f64,
                    _ => 1.0,
                };
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let gv = match axis {
                            Axis::Rows => g.get(0, j),
                            Axis::Cols => g.get(i, 0),
                        };
                        ga.set(i, j, gv * scale);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowNorm(a) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    let norm = out.get(r, 0);
                    if norm == 0.0 {
                        continue;
                    }
                    let k = g.get(r, 0) / norm;
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(ta.row(r)) {
                        *o = k * x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let piece = match axis {
                        Axis::Rows => {
                            let rows: Vec<usize> = (offset..offset + pr).collect();
                            offset += pr;
                            g.gather_rows(&rows)?
                        }
                        Axis::Cols => {
                            let s = g.slice_cols(offset, offset + pc)?;
                            offset += pc;
                            s
                        }
                    };
                    self.accumulate(grads, p, piece);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::GatherRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::PairwiseSqDist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.cols();
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), d);
                    par::for_each_row_mut(ga.data_mut(), d, tb.rows() * d, |i, row| {
                        let ai = ta.row(i);
                        for j in 0..tb.rows() {
                            let w = 2.0 * g.get(i, j);
                            if w == 0.0 {
                                continue;
                            }
                            for ((o, x), y) in row.iter_mut().zip(ai).zip(tb.row(j)) {
                                *o += w * (x - y);
                            }
                        }
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), d);
                    par::for_each_row_mut(gb.data_mut(), d, ta.rows() * d, |j, row| {
                        let bj = tb.row(j);
                        for i in 0..ta.rows() {
                            let w = 2.0 * g.get(i, j);
                            if w == 0.0 {
                                continue;
                            }
                            for ((o, y), x) in row.iter_mut().zip(bj).zip(ta.row(i)) {
                                *o += w * (y - x);
                            }
                        }
                    });
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::PairwiseSetMmd(a, channels, terms) => {
                let ga = set_mmd_backward(self.value(*a), *channels, terms, g);
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}

fn reduce_axis(t: &Tensor, axis: Axis) -> Tensor {
    match axis {
        Axis::Rows => {
            let mut out = Tensor::zeros(1, t.cols());
            for r in 0..t.rows() {
                for (o, &v) in out.data_mut().iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Axis::Cols => {
            let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
            Tensor::new(t.rows(), 1, data).expect("non-empty")
        }
    }
}

/// Gradient of `Σ_ij g_ij · M_ij` where `M_ij = S_i + S_j − 2 C_ij` for `i ≠ j`.
fn set_mmd_backward(t: &Tensor, channels: usize, terms: &[KernelTerm], g: &Tensor) -> Tensor {
    let b = t.rows();
    let width = t.cols();
    let s = width / channels;
    let inv = 1.0 / (s * s) as f64;

    // weight on S_i: Σ_{j≠i} (g_ij + g_ji)
    let self_w: Vec<f64> = (0..b)
        .map(|i| (0..b).filter(|&j| j != i).map(|j| g.get(i, j) + g.get(j, i)).sum())
        .collect();

    let mut out = Tensor::zeros(b, width);
    par::for_each_row_mut(out.data_mut(), width, b * s * s * channels, |i, row| {
        let xi = t.row(i);
        // ∂S_i/∂x_i: 2/s² Σ_{a,c} -k'(x_ia, x_ic)(x_ia - x_ic)
        for (pa, u) in xi.chunks(channels).enumerate() {
            let grad = &mut row[pa * channels..(pa + 1) * channels];
            for v in xi.chunks(channels) {
                let slope = multi_kernel_slope(terms, sq_dist(u, v));
                let w = -2.0 * inv * slope * self_w[i];
                for ((o, x), y) in grad.iter_mut().zip(u).zip(v) {
                    *o += w * (x - y);
                }
            }
            // cross terms: C_ij with x_i as first argument (weight -2 g_ij)
            // and C_ji with x_i as second argument (weight -2 g_ji)
            for j in 0..b {
                if j == i {
                    continue;
                }
                let cw = -2.0 * (g.get(i, j) + g.get(j, i));
                if cw == 0.0 {
                    continue;
                }
                for v in t.row(j).chunks(channels) {
                    let slope = multi_kernel_slope(terms, sq_dist(u, v));
                    let w = -inv * slope * cw;
                    for ((o, x), y) in grad.iter_mut().zip(u).zip(v) {
                        *o += w * (x - y);
                    }
                }
            }
        }
    });
    out
}
