//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every node holds a `rows × cols` value; batched computations keep one
//! row per example. The primitive set is deliberately small: affine maps,
//! pointwise nonlinearities, elementwise arithmetic, reductions, column
//! slicing/concatenation and a diagonal Gaussian log-density.

use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

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
    /// `x · wᵀ + b` with `x: B×in`, `w: out×in`, `b: 1×out`.
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    /// Row-wise `log N(x; mean, diag(exp(log_var)))`, output `B×1`.
    GaussLogDensity { x: Var, mean: Var, log_var: Var },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation, replayed backwards by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    scope: String,
    first_non_finite: Option<String>,
}

/// Adjoints for every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` if `v` did not
    /// influence the output.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
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

    /// Label attached to subsequently recorded nodes in diagnostics.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Name of the scope that produced the first non-finite value, if any.
    pub fn non_finite_scope(&self) -> Option<&str> {
        self.first_non_finite.as_deref()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            let label = if self.scope.is_empty() {
                format!("node {}", self.nodes.len())
            } else {
                self.scope.clone()
            };
            self.first_non_finite = Some(label);
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine: input width");
        assert_eq!(bv.shape(), (1, wv.rows()), "affine: bias shape");
        let mut out = xv.matmul_t(wv).expect("affine shapes checked");
        let bias = bv.data();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Affine { x, w, b }, ng)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| k * v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise operands must match");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape preserved");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let out = xv.select_cols(start, len);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hstack(&mats).expect("concat_cols: row counts must match");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let ng = self.ng(x);
        self.push(Matrix::filled(1, 1, s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.data().len() as f64;
        let ng = self.ng(x);
        self.push(Matrix::filled(1, 1, s), Op::MeanAll(x), ng)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(v.rows(), 1, data).expect("column vector");
        let ng = self.ng(x);
        self.push(out, Op::RowSum(x), ng)
    }

    pub fn gauss_log_density(&mut self, x: Var, mean: Var, log_var: Var) -> Var {
        let (xv, mv, lv) = (self.value(x), self.value(mean), self.value(log_var));
        assert_eq!(xv.shape(), mv.shape());
        assert_eq!(xv.shape(), lv.shape());
        let data = (0..xv.rows())
            .map(|r| {
                xv.row(r)
                    .iter()
                    .zip(mv.row(r))
                    .zip(lv.row(r))
                    .map(|((&xi, &mi), &li)| -0.5 * (LN_2PI + li + (xi - mi).powi(2) * (-li).exp()))
                    .sum()
            })
            .collect();
        let out = Matrix::from_vec(xv.rows(), 1, data).expect("column vector");
        let ng = self.ng(x) || self.ng(mean) || self.ng(log_var);
        self.push(out, Op::GaussLogDensity { x, mean, log_var }, ng)
    }

    /// Back-propagates from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if let Some(scope) = &self.first_non_finite {
            return Err(Error::NonFinite {
                context: format!("forward pass ({scope})"),
            });
        }
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        if let Some((i, _)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.as_ref().is_some_and(|m| !m.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("gradient of node {i}"),
            });
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                if ng(*x) {
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        let dst = dx.row_mut(r);
                        for (o, &go) in g.row(r).iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, wv.row(o), dst);
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if ng(*w) {
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    for r in 0..g.rows() {
                        let xr = xv.row(r);
                        for (o, &go) in g.row(r).iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, xr, dw.row_mut(o));
                            }
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if ng(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        axpy(1.0, g.row(r), db.row_mut(0));
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Tanh(x) => {
                let d = zip_map(g, &node.value, |gi, yi| gi * (1.0 - yi * yi));
                accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = zip_map(g, val(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = zip_map(g, &node.value, |gi, yi| gi * yi);
                accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = zip_map(g, val(*x), |gi, xi| gi / xi);
                accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let d = zip_map(g, val(*x), |gi, xi| 2.0 * gi * xi);
                accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                if ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if ng(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    accumulate(grads, *a, zip_map(g, val(*b), |gi, bi| gi * bi));
                }
                if ng(*b) {
                    accumulate(grads, *b, zip_map(g, val(*a), |gi, ai| gi * ai));
                }
            }
            Op::Scale(x, k) => accumulate(grads, *x, g.map(|v| v * k)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Clamp(x, lo, hi) => {
                let d = zip_map(g, val(*x), |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 });
                accumulate(grads, *x, d);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if ng(p) {
                        accumulate(grads, p, g.select_cols(off, cols));
                    }
                    off += cols;
                }
            }
            Op::SumAll(x) => {
                let xv = val(*x);
                accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.data()[0]));
            }
            Op::MeanAll(x) => {
                let xv = val(*x);
                let k = g.data()[0] / xv.data().len() as f64;
                accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), k));
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    d.row_mut(r).fill(g.get(r, 0));
                }
                accumulate(grads, *x, d);
            }
            Op::GaussLogDensity { x, mean, log_var } => {
                let (xv, mv, lv) = (val(*x), val(*mean), val(*log_var));
                let (rows, cols) = xv.shape();
                let mut dx = Matrix::zeros(rows, cols);
                let mut dl = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.get(r, 0);
                    for c in 0..cols {
                        let prec = (-lv.get(r, c)).exp();
                        let diff = xv.get(r, c) - mv.get(r, c);
                        dx.set(r, c, -gr * diff * prec);
                        dl.set(r, c, gr * 0.5 * (diff * diff * prec - 1.0));
                    }
                }
                if ng(*mean) {
                    accumulate(grads, *mean, dx.map(|v| -v));
                }
                if ng(*x) {
                    accumulate(grads, *x, dx);
                }
                if ng(*log_var) {
                    accumulate(grads, *log_var, dl);
                }
            }
        }
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => axpy(1.0, d.data(), existing.data_mut()),
        slot @ None => *slot = Some(d),
    }
}

/// Scalar dot product recorded as `sum(a ⊙ b)`; handy for tests.
pub fn inner(tape: &mut Tape, a: Var, b: Var) -> Var {
    let p = tape.mul(a, b);
    tape.sum_all(p)
}

#[allow(dead_code)]
fn _dot_used(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}
