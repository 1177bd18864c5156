//! Reverse-mode gradient tape over dense `f64` matrices.
//!
//! Every training objective in this crate is assembled from the closed op
//! set below: affine layers, ReLU/sigmoid/softmax, log/exp, elementwise
//! arithmetic, sum/mean reductions, column concatenation, pairwise squared
//! distances with RBF-mixture kernels, classification losses, and the
//! straight-through Gumbel sampler. Scalars are represented as 1x1 matrices.
//!
//! A tape lives for one loss evaluation: insert parameters as [`Tape::param`]
//! leaves, build the loss, call [`Tape::backward`], read gradients, drop the
//! tape. Constants inserted with [`Tape::constant`] are skipped during the
//! backward sweep.

use ndarray::{concatenate, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("invalid layer dims: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a (n x k) times b (m x k) transposed -> n x m.
    MatMulNT(Var, Var),
    /// Broadcast row-vector bias (1 x d) over the rows of a (n x d).
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    PairwiseSqDist(Var, Var),
    /// Elementwise sum of exp(-d / (2 sigma_n)); `deriv` caches d/dd.
    RbfMixture { dist: Var, deriv: Array2<f64> },
    /// Mean one-hot cross entropy of row-softmaxed logits -> 1x1.
    SoftmaxCrossEntropy { logits: Var, probs: Array2<f64>, targets: Array2<f64> },
    /// Mean row entropy of row-softmaxed logits -> 1x1.
    SoftmaxEntropy { logits: Var, probs: Array2<f64>, row_entropy: Vec<f64> },
    /// Hard one-hot forward, soft softmax((logits+noise)/tau) backward.
    GumbelStraightThrough { logits: Var, soft: Array2<f64>, tau: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero matrix if the loss does not
    /// depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.nodes[v.0].value.raw_dim()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_rows_stable(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "expected a scalar node");
        val[[0, 0]]
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf skipped by the backward sweep.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `a.dot(b.t())`: a is n x k, b is m x k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulNT(a, b), needs)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        let needs = self.needs(a) || self.needs(bias);
        self.push(value, Op::AddRow(a, bias), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a), needs)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let needs = self.needs(a);
        self.push(value, Op::Ln(a), needs)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows_stable(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let len = self.value(a).len() as f64;
        let value = Array2::from_elem((1, 1), self.value(a).sum() / len);
        let needs = self.needs(a);
        self.push(value, Op::Mean(a), needs)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).nrows(), self.value(b).nrows(), "concat row mismatch");
        let value = concatenate![Axis(1), self.value(a).view(), self.value(b).view()];
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatCols(a, b), needs)
    }

    /// Squared Euclidean distances between all row pairs of a (n x d) and
    /// b (m x d) -> n x m.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.ncols(), bv.ncols(), "pairwise dim mismatch");
        let gram = av.dot(&bv.t());
        let a_sq: Vec<f64> = av.rows().into_iter().map(|r| r.dot(&r)).collect();
        let b_sq: Vec<f64> = bv.rows().into_iter().map(|r| r.dot(&r)).collect();
        let mut value = gram;
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (a_sq[i] + b_sq[j] - 2.0 * *v).max(0.0);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::PairwiseSqDist(a, b), needs)
    }

    /// Sum over `sigmas` of exp(-d / (2 sigma)) applied elementwise to a
    /// matrix of squared distances.
    pub fn rbf_mixture(&mut self, dist: Var, sigmas: &[f64]) -> Var {
        assert!(sigmas.iter().all(|s| *s > 0.0), "bandwidths must be positive");
        let d = self.value(dist);
        let mut value = Array2::zeros(d.raw_dim());
        let mut deriv = Array2::zeros(d.raw_dim());
        for ((v, dv), &x) in value.iter_mut().zip(deriv.iter_mut()).zip(d.iter()) {
            let mut acc = 0.0;
            let mut dacc = 0.0;
            for &s in sigmas {
                let e = (-x / (2.0 * s)).exp();
                acc += e;
                dacc -= e / (2.0 * s);
            }
            *v = acc;
            *dv = dacc;
        }
        let needs = self.needs(dist);
        self.push(value, Op::RbfMixture { dist, deriv }, needs)
    }

    /// Mean cross entropy between one-hot `targets` and row-softmaxed
    /// logits; returns 1x1.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim(), "target shape mismatch");
        let probs = softmax_rows_stable(z);
        let n = z.nrows() as f64;
        let mut total = 0.0;
        for (zrow, trow) in z.rows().into_iter().zip(targets.rows()) {
            let max = zrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + zrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let z_true: f64 = zrow.iter().zip(trow.iter()).map(|(z, t)| z * t).sum();
            total += lse - z_true;
        }
        let value = Array2::from_elem((1, 1), total / n);
        let needs = self.needs(logits);
        self.push(value, Op::SoftmaxCrossEntropy { logits, probs, targets }, needs)
    }

    /// Mean Shannon entropy of row-softmaxed logits; returns 1x1.
    pub fn softmax_entropy(&mut self, logits: Var) -> Var {
        let probs = softmax_rows_stable(self.value(logits));
        let row_entropy: Vec<f64> = probs
            .rows()
            .into_iter()
            .map(|r| -r.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .collect();
        let n = row_entropy.len() as f64;
        let value = Array2::from_elem((1, 1), row_entropy.iter().sum::<f64>() / n);
        let needs = self.needs(logits);
        self.push(value, Op::SoftmaxEntropy { logits, probs, row_entropy }, needs)
    }

    /// Straight-through Gumbel sampler: forward emits the one-hot argmax of
    /// `logits + noise`; backward routes gradients through
    /// softmax((logits + noise) / tau).
    pub fn gumbel_straight_through(&mut self, logits: Var, noise: &Array2<f64>, tau: f64) -> Var {
        assert!(tau > 0.0, "temperature must be positive");
        let z = self.value(logits);
        assert_eq!(z.dim(), noise.dim(), "gumbel noise shape mismatch");
        let perturbed = z + noise;
        let soft = softmax_rows_stable(&perturbed.mapv(|v| v / tau));
        let mut hard = Array2::zeros(z.raw_dim());
        for (i, row) in perturbed.rows().into_iter().enumerate() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            hard[[i, argmax]] = 1.0;
        }
        let needs = self.needs(logits);
        self.push(hard, Op::GumbelStraightThrough { logits, soft, tau }, needs)
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a finite scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lval = self.value(loss);
        if lval.dim() != (1, 1) {
            return Err(DiffError::ShapeMismatch(format!(
                "loss must be 1x1, got {:?}",
                lval.dim()
            )));
        }
        if !lval[[0, 0]].is_finite() {
            return Err(DiffError::NonFiniteLoss);
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        // Inputs always precede their consumers on the tape, so a reverse
        // index sweep sees each node only after its gradient is complete.
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].clone() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => continue,
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout.dot(self.value(*b)));
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, gout.t().dot(self.value(*a)));
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(*bias) {
                        let col_sums = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::accumulate(&mut grads, *bias, col_sums);
                    }
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, gout);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, -gout);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, &gout * self.value(*b));
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, &gout * self.value(*a));
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout * *c);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let mask = self.value(*a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        Self::accumulate(&mut grads, *a, gout * &mask);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let ds = self.nodes[idx].value.mapv(|s| s * (1.0 - s));
                        Self::accumulate(&mut grads, *a, gout * &ds);
                    }
                }
                Op::Exp(a) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout * &self.nodes[idx].value);
                    }
                }
                Op::Ln(a) => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, gout / self.value(*a));
                    }
                }
                Op::Softmax(a) => {
                    if self.needs(*a) {
                        let p = &self.nodes[idx].value;
                        let mut gin = Array2::zeros(p.raw_dim());
                        for ((mut gi, go), pr) in
                            gin.rows_mut().into_iter().zip(gout.rows()).zip(p.rows())
                        {
                            let dot: f64 = go.iter().zip(pr.iter()).map(|(g, p)| g * p).sum();
                            for ((gv, &g), &p) in gi.iter_mut().zip(go.iter()).zip(pr.iter()) {
                                *gv = p * (g - dot);
                            }
                        }
                        Self::accumulate(&mut grads, *a, gin);
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let g = gout[[0, 0]];
                        let shape = self.value(*a).raw_dim();
                        Self::accumulate(&mut grads, *a, Array2::from_elem(shape, g));
                    }
                }
                Op::Mean(a) => {
                    if self.needs(*a) {
                        let len = self.value(*a).len() as f64;
                        let g = gout[[0, 0]] / len;
                        let shape = self.value(*a).raw_dim();
                        Self::accumulate(&mut grads, *a, Array2::from_elem(shape, g));
                    }
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).ncols();
                    if self.needs(*a) {
                        let ga = gout.slice(ndarray::s![.., ..na]).to_owned();
                        Self::accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = gout.slice(ndarray::s![.., na..]).to_owned();
                        Self::accumulate(&mut grads, *b, gb);
                    }
                }
                Op::PairwiseSqDist(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.needs(*a) {
                        let row_sums = gout.sum_axis(Axis(1)).insert_axis(Axis(1));
                        let ga = 2.0 * (av * &row_sums - gout.dot(bv));
                        Self::accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let col_sums = gout.sum_axis(Axis(0)).insert_axis(Axis(1));
                        let gb = 2.0 * (bv * &col_sums - gout.t().dot(av));
                        Self::accumulate(&mut grads, *b, gb);
                    }
                }
                Op::RbfMixture { dist, deriv } => {
                    if self.needs(*dist) {
                        Self::accumulate(&mut grads, *dist, gout * deriv);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                    if self.needs(*logits) {
                        let n = probs.nrows() as f64;
                        let g = gout[[0, 0]] / n;
                        Self::accumulate(&mut grads, *logits, (probs - targets) * g);
                    }
                }
                Op::SoftmaxEntropy { logits, probs, row_entropy } => {
                    if self.needs(*logits) {
                        let n = probs.nrows() as f64;
                        let g = gout[[0, 0]] / n;
                        let mut gin = probs.clone();
                        for (mut row, &h) in gin.rows_mut().into_iter().zip(row_entropy.iter()) {
                            row.mapv_inplace(|p| {
                                if p > 0.0 {
                                    -p * (p.ln() + h) * g
                                } else {
                                    0.0
                                }
                            });
                        }
                        Self::accumulate(&mut grads, *logits, gin);
                    }
                }
                Op::GumbelStraightThrough { logits, soft, tau } => {
                    if self.needs(*logits) {
                        let mut gin = Array2::zeros(soft.raw_dim());
                        for ((mut gi, go), pr) in
                            gin.rows_mut().into_iter().zip(gout.rows()).zip(soft.rows())
                        {
                            let dot: f64 = go.iter().zip(pr.iter()).map(|(g, p)| g * p).sum();
                            for ((gv, &g), &p) in gi.iter_mut().zip(go.iter()).zip(pr.iter()) {
                                *gv = p * (g - dot) / tau;
                            }
                        }
                        Self::accumulate(&mut grads, *logits, gin);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
