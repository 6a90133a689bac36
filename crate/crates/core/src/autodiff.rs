//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records every primitive in execution order, so backward is a
//! single reverse sweep. Shapes are at most two-dimensional. Broadcasting is
//! limited to explicit operations: [`Tape::scale`] (scalar times tensor) and
//! [`Tape::add_row`] (a bias vector added to every row of a matrix); every
//! other elementwise op needs identical shapes.
//!
//! Reductions run left to right in row-major order, so re-running a tape
//! gives bit-identical values and gradients.

use crate::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// `(rows, cols)` view; a vector is a single row.
    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Numeric kernels shared by the tape and the tape-free inference path, so
/// that both produce bit-identical values.
pub mod kernel {
    /// `out = a (m×k) · b (k×n)`, summing over `k` in increasing order.
    pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
        out[..m * n].iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }

    #[inline]
    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[inline]
    pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
        x.max(lo).min(hi)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Clamp(Var, f64, f64),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Neg(_) => "neg",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Clamp(..) => "clamp",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let index = self.nodes.len();
        if value.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                index,
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(index))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        self.push(out, op)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(out, op)
    }

    /// Matrix product. Supported shapes: `(m,k)·(k,n)`, `(k)·(k,n)` and
    /// `(m,k)·(k)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: ta.shape.clone(),
            rhs: tb.shape.clone(),
        };
        let out = match (ta.shape.len(), tb.shape.len()) {
            (2, 2) | (1, 2) => {
                let (m, k) = ta.rows_cols();
                if tb.shape[0] != k {
                    return Err(mismatch());
                }
                let n = tb.shape[1];
                let mut data = vec![0.0; m * n];
                kernel::matmul(&ta.data, m, k, &tb.data, n, &mut data);
                let shape = if ta.shape.len() == 2 { vec![m, n] } else { vec![n] };
                Tensor { shape, data }
            }
            (2, 1) => {
                let (m, k) = (ta.shape[0], ta.shape[1]);
                if tb.shape[0] != k {
                    return Err(mismatch());
                }
                let mut data = vec![0.0; m];
                kernel::matmul(&ta.data, m, k, &tb.data, 1, &mut data);
                Tensor {
                    shape: vec![m],
                    data,
                }
            }
            _ => return Err(mismatch()),
        };
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a vector of length `n` to every row of an `(m, n)` matrix (or to
    /// a vector of length `n`).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.shape.len() != 1 || tb.shape[0] != n || tx.shape.len() > 2 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: tx.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = tx
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data[i % n])
            .collect();
        let out = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        self.push(out, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), kernel::sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Neg(a), |x| -x)
    }

    /// Clamps elementwise; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, Op::Clamp(a, lo, hi), |x| kernel::clamp(x, lo, hi))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() || shape.len() > 2 {
            return Err(Error::Shape {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        self.push(out, Op::Reshape(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().fold(0.0, |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Concatenates along the last axis. All parts must have the same rank
    /// and the same leading dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let rank = first.shape.len();
        let rows = first.rows_cols().0;
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape.len() != rank || t.rows_cols().0 != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.last_dim();
                data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
            }
        }
        let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
        self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len` along the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if start + len > c || t.shape.len() > 2 {
            return Err(Error::Shape {
                op: "slice",
                lhs: t.shape.clone(),
                rhs: vec![start, len],
            });
        }
        let rows = t.rows_cols().0;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * c + start..r * c + start + len]);
        }
        let shape = if t.shape.len() == 2 { vec![rows, len] } else { vec![len] };
        self.push(Tensor { shape, data }, Op::Slice(a, start, len))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(&lv.shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (ga, gb) = matmul_backward(ta, tb, &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, map_tensor(&g, |x| -x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, zip_tensor(&g, tb, |x, y| x * y));
                    accumulate(&mut grads, *b, zip_tensor(&g, ta, |x, y| x * y));
                }
                Op::AddRow(x, bias) => {
                    let n = g.last_dim();
                    let mut gb = vec![0.0; n];
                    for (i, &v) in g.data.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    accumulate(&mut grads, *bias, Tensor::vector(gb));
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, map_tensor(&g, |x| k * x)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, zip_tensor(&g, y, |gv, yv| gv * (1.0 - yv * yv)));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, zip_tensor(&g, y, |gv, yv| gv * yv * (1.0 - yv)));
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, zip_tensor(&g, &node.value, |gv, yv| gv * yv));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip_tensor(&g, x, |gv, xv| gv / xv));
                }
                Op::Neg(a) => accumulate(&mut grads, *a, map_tensor(&g, |x| -x)),
                Op::Sum(a) => {
                    let shape = self.value(*a).shape.clone();
                    accumulate(&mut grads, *a, Tensor::filled(&shape, g.data[0]));
                }
                Op::Concat(parts) => {
                    let rows = g.rows_cols().0;
                    let total = g.last_dim();
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let c = tp.last_dim();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(
                            &mut grads,
                            p,
                            Tensor {
                                shape: tp.shape.clone(),
                                data,
                            },
                        );
                        offset += c;
                    }
                }
                Op::Slice(a, start, len) => {
                    let ta = self.value(*a);
                    let c = ta.last_dim();
                    let rows = ta.rows_cols().0;
                    let mut data = vec![0.0; ta.data.len()];
                    for r in 0..rows {
                        data[r * c + start..r * c + start + len]
                            .copy_from_slice(&g.data[r * len..(r + 1) * len]);
                    }
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor {
                            shape: ta.shape.clone(),
                            data,
                        },
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    accumulate(
                        &mut grads,
                        *a,
                        zip_tensor(&g, x, |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 }),
                    );
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape.clone();
                    accumulate(&mut grads, *a, Tensor { shape, data: g.data.clone() });
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data.iter_mut().zip(&g.data) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn matmul_backward(ta: &Tensor, tb: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    if tb.shape.len() == 1 {
        // (m,k)·(k) -> (m)
        let (m, k) = (ta.shape[0], ta.shape[1]);
        let mut ga = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                ga[i * k + p] = g.data[i] * tb.data[p];
            }
        }
        let at = transpose(&ta.data, m, k);
        let mut gb = vec![0.0; k];
        kernel::matmul(&at, k, m, &g.data, 1, &mut gb);
        return (
            Tensor {
                shape: ta.shape.clone(),
                data: ga,
            },
            Tensor::vector(gb),
        );
    }
    let (m, k) = ta.rows_cols();
    let n = tb.shape[1];
    // dA = dC · Bᵀ
    let bt = transpose(&tb.data, k, n);
    let mut ga = vec![0.0; m * k];
    kernel::matmul(&g.data, m, n, &bt, k, &mut ga);
    // dB = Aᵀ · dC
    let at = transpose(&ta.data, m, k);
    let mut gb = vec![0.0; k * n];
    kernel::matmul(&at, k, m, &g.data, n, &mut gb);
    (
        Tensor {
            shape: ta.shape.clone(),
            data: ga,
        },
        Tensor {
            shape: tb.shape.clone(),
            data: gb,
        },
    )
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; leaves the loss does not reach get zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Compares the tape gradient of `f` with central finite differences.
///
/// `f` records a scalar loss on a fresh tape given the parameter leaf. It
/// must be deterministic (freeze any random draws). Returns the largest
/// `|analytic - numeric| / max(|numeric|, 1e-8)` over all parameters.
pub fn finite_diff_check<F>(f: F, params: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(p.clone());
        let loss = f(&mut tape, v)?;
        Ok(tape.value(loss).item())
    };
    let mut tape = Tape::new();
    let pv = tape.leaf(params.clone());
    let loss = f(&mut tape, pv)?;
    let analytic = tape.backward(loss)?.wrt(pv);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let up = eval(&probe)?;
        probe.data[i] = orig - step;
        let down = eval(&probe)?;
        probe.data[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic.data[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
