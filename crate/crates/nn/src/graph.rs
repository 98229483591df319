//! Eager tape for reverse-mode differentiation.
//!
//! Every operation computes its value immediately and records how to push a
//! gradient back to its inputs. `backward` walks the tape in reverse creation
//! order, so reductions always happen in the same order and results are
//! bit-reproducible.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        tb: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gelu(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    Mean(Var),
    SoftCrossEntropy {
        probs: Var,
        targets: Tensor<T>,
    },
    MaskedNll {
        logits: Var,
        mask: Vec<bool>,
        counts: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        gemm_into(av, false, bv, false, T::one(), T::zero(), &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, tb: false }, rg))
    }

    /// `a * b^T`, without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(NnError::ShapeMismatch {
                op: "matmul_nt",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm_into(av, false, bv, true, T::one(), T::zero(), &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, tb: true }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch {
                op: "add",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = av.clone();
        out.add_scaled(bv, T::one());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds the `1 x n` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    /// Multiplies every row of `x` element-wise by the `1 x n` row `s`.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.rows() != 1 || sv.cols() != xv.cols() {
            return Err(NnError::ShapeMismatch {
                op: "mul_row",
                lhs: xv.shape(),
                rhs: sv.shape(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &ss) in out.row_mut(r).iter_mut().zip(sv.data()) {
                *o *= ss;
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::MulRow(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.cols()).unwrap();
        let eps = T::lit(LAYER_NORM_EPS);
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / n;
            let rs = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rs;
            }
            rstd.push(rs);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::LayerNorm { x, rstd }, rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::lit(gelu_parts(v.as_f64()).0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.push(out, Op::Transpose(x), rg)
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape(),
                    rhs: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + width` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + width > xv.cols() {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                lhs: xv.shape(),
                rhs: (start, start + width),
            });
        }
        let out = Tensor::from_fn(xv.rows(), width, |r, c| xv.get(r, start + c));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    /// Scales every row to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = row
                .iter()
                .fold(T::zero(), |a, &v| a + v * v)
                .sqrt()
                .max(T::lit(NORM_EPS));
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::L2Normalize { x, norms }, rg)
    }

    /// Mean over all elements, as a `1 x 1` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.len().max(1)).unwrap();
        let s = xv.data().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    /// Mean over rows of `-sum_j t_j log(max(p_j, 1e-12))`.
    ///
    /// `probs` are probabilities (rows of a softmax), `targets` soft labels.
    pub fn soft_cross_entropy(&mut self, probs: Var, targets: Tensor<T>) -> Result<Var> {
        let pv = self.value(probs);
        if pv.shape() != targets.shape() {
            return Err(NnError::ShapeMismatch {
                op: "soft_cross_entropy",
                lhs: pv.shape(),
                rhs: targets.shape(),
            });
        }
        let clamp = T::lit(LOG_CLAMP);
        let mut total = T::zero();
        for r in 0..pv.rows() {
            let mut row = T::zero();
            for (&p, &t) in pv.row(r).iter().zip(targets.row(r)) {
                row -= t * p.max(clamp).ln();
            }
            total += row;
        }
        let n = T::from_usize(pv.rows().max(1)).unwrap();
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::SoftCrossEntropy { probs, targets },
            rg,
        ))
    }

    /// Mean over rows of the positive-set log-likelihood
    /// `-(1/|A_i|) sum_{p in A_i} log softmax(logits_i)_p`, where `A_i` is
    /// the set of columns flagged in row `i` of `mask`. Rows with an empty
    /// positive set contribute zero but still count in the mean.
    pub fn masked_nll(&mut self, logits: Var, mask: Vec<bool>) -> Result<Var> {
        let lv = self.value(logits);
        if mask.len() != lv.len() {
            return Err(NnError::ShapeMismatch {
                op: "masked_nll",
                lhs: lv.shape(),
                rhs: (mask.len(), 1),
            });
        }
        let cols = lv.cols();
        let mut total = T::zero();
        let mut counts = Vec::with_capacity(lv.rows());
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let count = m.iter().filter(|&&b| b).count();
            counts.push(count);
            if count == 0 {
                continue;
            }
            let lse = log_sum_exp(row);
            let mut acc = T::zero();
            for (&l, &is_pos) in row.iter().zip(m) {
                if is_pos {
                    acc += lse - l;
                }
            }
            total += acc / T::from_usize(count).unwrap();
        }
        let n = T::from_usize(lv.rows().max(1)).unwrap();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::MaskedNll {
                logits,
                mask,
                counts,
            },
            rg,
        ))
    }

    /// Reverse pass from a `1 x 1` loss. Only nodes that require a gradient
    /// receive one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NnError::NonScalarLoss(lv.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&g, T::one()),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.requires_grad(a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    // tb: C = A B^T -> dA = G B ; else dA = G B^T
                    gemm_into(g, false, bv, !tb, T::one(), T::zero(), &mut ga);
                    self.accumulate(grads, a, ga);
                }
                if self.requires_grad(b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    if tb {
                        gemm_into(g, true, av, false, T::one(), T::zero(), &mut gb);
                    } else {
                        gemm_into(av, true, g, false, T::one(), T::zero(), &mut gb);
                    }
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::AddRow(x, b) => {
                self.accumulate(grads, x, g.clone());
                if self.requires_grad(b) {
                    self.accumulate(grads, b, col_sums(g));
                }
            }
            &Op::MulRow(x, s) => {
                let (xv, sv) = (self.value(x), self.value(s));
                if self.requires_grad(x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        for (o, &ss) in gx.row_mut(r).iter_mut().zip(sv.data()) {
                            *o *= ss;
                        }
                    }
                    self.accumulate(grads, x, gx);
                }
                if self.requires_grad(s) {
                    let mut gs = Tensor::zeros(1, sv.cols());
                    for r in 0..g.rows() {
                        for ((o, &gg), &xx) in gs.data_mut().iter_mut().zip(g.row(r)).zip(xv.row(r))
                        {
                            *o += gg * xx;
                        }
                    }
                    self.accumulate(grads, s, gs);
                }
            }
            &Op::Scale(x, c) => self.accumulate(grads, x, g.map(|v| v * c)),
            Op::LayerNorm { x, rstd } => {
                let n = T::from_usize(y.cols()).unwrap();
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().fold(T::zero(), |a, &v| a + v) / n;
                    let mean_gy = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |a, (&gg, &yy)| a + gg * yy)
                        / n;
                    for ((o, &gg), &yy) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = rstd[r] * (gg - mean_g - yy * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::Softmax(x) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |a, (&gg, &yy)| a + gg * yy);
                    for ((o, &gg), &yy) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = yy * (gg - dot);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            &Op::Gelu(x) => {
                let xv = self.value(x);
                let mut gx = g.clone();
                for (o, &xx) in gx.data_mut().iter_mut().zip(xv.data()) {
                    *o *= T::lit(gelu_parts(xx.as_f64()).1);
                }
                self.accumulate(grads, x, gx);
            }
            &Op::Transpose(x) => self.accumulate(grads, x, g.transpose()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            &Op::Slice { x, start } => {
                let xv = self.value(x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, x, gx);
            }
            Op::L2Normalize { x, norms } => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |a, (&gg, &yy)| a + gg * yy);
                    for ((o, &gg), &yy) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = (gg - yy * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::Mean(x) => {
                let xv = self.value(x);
                let n = T::from_usize(xv.len().max(1)).unwrap();
                self.accumulate(grads, x, Tensor::full(xv.rows(), xv.cols(), g.item() / n));
            }
            Op::SoftCrossEntropy { probs, targets } => {
                let pv = self.value(*probs);
                let n = T::from_usize(pv.rows().max(1)).unwrap();
                let scale = g.item() / n;
                let clamp = T::lit(LOG_CLAMP);
                let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                for ((o, &p), &t) in gp.data_mut().iter_mut().zip(pv.data()).zip(targets.data()) {
                    if p > clamp {
                        *o = -scale * t / p;
                    }
                }
                self.accumulate(grads, *probs, gp);
            }
            Op::MaskedNll {
                logits,
                mask,
                counts,
            } => {
                let lv = self.value(*logits);
                let cols = lv.cols();
                let n = T::from_usize(lv.rows().max(1)).unwrap();
                let scale = g.item() / n;
                let mut gl = Tensor::zeros(lv.rows(), cols);
                for r in 0..lv.rows() {
                    if counts[r] == 0 {
                        continue;
                    }
                    let inv = T::one() / T::from_usize(counts[r]).unwrap();
                    let out = gl.row_mut(r);
                    out.copy_from_slice(lv.row(r));
                    softmax_in_place(out);
                    for (o, &is_pos) in out.iter_mut().zip(&mask[r * cols..(r + 1) * cols]) {
                        if is_pos {
                            *o -= inv;
                        }
                        *o *= scale;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}

fn col_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
    max + s.ln()
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
