//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node.
//! Parameters are referenced in place from a [`ParamStore`]; inputs are
//! constants. [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every parameter it touched.

use ndarray::{s, Array2, Axis};

use crate::params::{Gradients, Mat, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// `a + row`, `row` broadcast over the rows of `a`
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    Gelu(Var),
    Sigmoid(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    /// `sum((x - target)^2)`
    SquaredError(Var, Mat),
    /// mean binary cross-entropy of sigmoid(x) against target
    BceWithLogits(Var, Mat),
    Sum(Vec<Var>),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "broadcast operand must be a row");
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// Per-row layer normalisation with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut xhat = Mat::zeros((r, c));
        let mut inv_std = Vec::with_capacity(r);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * inv;
            }
        }
        let y = &xhat * self.value(gain) + self.value(bias);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::SoftmaxRows(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(gelu);
        let ng = self.ng(x);
        self.push(y, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(sigmoid);
        let ng = self.ng(x);
        self.push(y, Op::Sigmoid(x), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(y, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(y, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(x);
        self.push(y, Op::SliceRows(x, start), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(x);
        self.push(y, Op::SliceCols(x, start), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(x).iter().copied().collect();
        let y = Array2::from_shape_vec((rows, cols), flat).expect("reshape size mismatch");
        let ng = self.ng(x);
        self.push(y, Op::Reshape(x), ng)
    }

    /// Scalar `sum((x - target)^2)`.
    pub fn squared_error(&mut self, x: Var, target: &Mat) -> Var {
        assert_eq!(self.shape(x), target.dim(), "squared_error shape mismatch");
        let v: f64 = self
            .value(x)
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ng = self.ng(x);
        self.push(Mat::from_elem((1, 1), v), Op::SquaredError(x, target.clone()), ng)
    }

    /// Scalar mean binary cross-entropy between `sigmoid(x)` and `target`.
    pub fn bce_with_logits(&mut self, x: Var, target: &Mat) -> Var {
        assert_eq!(self.shape(x), target.dim(), "bce shape mismatch");
        let n = target.len() as f64;
        let v: f64 = self
            .value(x)
            .iter()
            .zip(target.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let ng = self.ng(x);
        self.push(Mat::from_elem((1, 1), v), Op::BceWithLogits(x, target.clone()), ng)
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc += self.value(p);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(acc, Op::Sum(parts.to_vec()), ng)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Gradient of scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut out = Gradients::zeros(self.params.len());
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_owned(*id, dy),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, dy.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&dy));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, dy.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, dy.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        acc(&mut grads, *b, dy.clone());
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, dy);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(&mut grads, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, dy);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, dy * *s),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*gain) {
                        acc(&mut grads, *gain, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*bias) {
                        acc(&mut grads, *bias, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let g = self.value(*gain);
                        let dxhat = &dy * g;
                        let c = dxhat.ncols() as f64;
                        let mut dx = Mat::zeros(dxhat.dim());
                        for i in 0..dxhat.nrows() {
                            let row = dxhat.row(i);
                            let xr = xhat.row(i);
                            let m1 = row.sum() / c;
                            let m2 = row.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
                            for j in 0..dxhat.ncols() {
                                dx[[i, j]] = inv_std[i] * (row[j] - m1 - xr[j] * m2);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::SoftmaxRows(x) => {
                    let y = self.value(Var(idx));
                    let mut dx = &dy * y;
                    for (mut r, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let s = r.sum();
                        r.zip_mut_with(&yr, |d, &yv| *d -= yv * s);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let d = self.value(*x).mapv(gelu_grad) * &dy;
                    acc(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let y = self.value(Var(idx));
                    let d = y.mapv(|s| s * (1.0 - s)) * &dy;
                    acc(&mut grads, *x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.shape(*p).0;
                        if self.ng(*p) {
                            acc(&mut grads, *p, dy.slice(s![off..off + r, ..]).to_owned());
                        }
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        if self.ng(*p) {
                            acc(&mut grads, *p, dy.slice(s![.., off..off + c]).to_owned());
                        }
                        off += c;
                    }
                }
                Op::SliceRows(x, start) => {
                    let mut g = Mat::zeros(self.shape(*x));
                    let r = dy.nrows();
                    g.slice_mut(s![*start..*start + r, ..]).assign(&dy);
                    acc(&mut grads, *x, g);
                }
                Op::SliceCols(x, start) => {
                    let mut g = Mat::zeros(self.shape(*x));
                    let c = dy.ncols();
                    g.slice_mut(s![.., *start..*start + c]).assign(&dy);
                    acc(&mut grads, *x, g);
                }
                Op::Reshape(x) => {
                    let flat: Vec<f64> = dy.iter().copied().collect();
                    acc(
                        &mut grads,
                        *x,
                        Array2::from_shape_vec(self.shape(*x), flat).expect("same size"),
                    );
                }
                Op::SquaredError(x, t) => {
                    let s = dy[[0, 0]];
                    let d = (self.value(*x) - t) * (2.0 * s);
                    acc(&mut grads, *x, d);
                }
                Op::BceWithLogits(x, t) => {
                    let s = dy[[0, 0]] / t.len() as f64;
                    let d = (self.value(*x).mapv(sigmoid) - t) * s;
                    acc(&mut grads, *x, d);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        if self.ng(*p) {
                            acc(&mut grads, *p, dy.clone());
                        }
                    }
                }
            }
        }
        out
    }
}
