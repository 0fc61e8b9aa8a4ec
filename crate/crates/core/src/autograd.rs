//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! computed eagerly; [`Tape::backward`] walks the records in reverse and
//! accumulates gradients for every node that depends on a trainable leaf.
//! Fused kernels (graph attention, cross attention, composition,
//! convolution) plug in through the [`Backward`] trait.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule of a fused operation.
pub trait Backward<T: Scalar> {
    /// Returns one gradient per input; entries whose `needs` flag is false
    /// may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Custom(Vec<Var>, Box<dyn Backward<T>>),
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Affine(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _) => vec![*a],
            Op::ConcatCols(v) | Op::ConcatRows(v) | Op::Custom(v, _) => v.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter bound on `tape`, keyed by name. Parameters
    /// that did not influence the loss receive zeros.
    pub fn params(&self, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        tape.params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf not tied to a parameter store.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds the named parameter of `store` as a trainable leaf. Repeated
    /// binds of the same name return the same variable.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_owned()))?
            .clone();
        let v = self.leaf(value);
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    /// Binds a parameter without tracking its gradient.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_owned()))?
            .clone();
        Ok(self.constant(value))
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(ta.shape(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.numel() != c {
            return Err(shape_err("add_row", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::of(scale), T::of(shift));
        let out = self.value(x).map(|v| s * v + b);
        self.push(out, Op::Affine(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, Op::Log(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        let out = self.value(x).map(|v| v.max(l).min(h));
        self.push(out, Op::Clamp(x, l, h))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::of(t.numel().max(1) as f64);
        let s: T = t.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_parts(&[rows, total], out);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks tensors along the leading dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tail: Vec<usize> = self.value(parts[0]).shape()[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", t.shape(), &tail));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let value = Tensor::from_parts(&shape, out);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let mut out = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::from_parts(&[t.rows(), end - start], out);
        Ok(self.push(value, Op::SliceCols(x, start)))
    }

    /// Row `indices[i]` of `x` becomes row `i` of the result.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {}", t.rows())));
        }
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_parts(&[indices.len(), c], out);
        Ok(self.push(value, Op::GatherRows(x, indices.to_vec())))
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(shape_err(
                "layer_norm",
                t.shape(),
                self.value(gamma).shape(),
            ));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::of(eps);
        let n = T::of(c as f64);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::from_parts(t.shape(), out);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Records the output of a fused kernel.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn Backward<T>>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        grads[loss.0] = Some(seed);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot => *slot = Some(delta),
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    acc(*a, Tensor::from_parts(ta.shape(), da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                    acc(*b, Tensor::from_parts(tb.shape(), db));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, elementwise(g, tb, |gv, bv| gv * bv));
                }
                if self.needs(*b) {
                    acc(*b, elementwise(g, ta, |gv, av| gv * av));
                }
            }
            Op::AddRow(x, bias) => {
                if self.needs(*x) {
                    acc(*x, g.clone());
                }
                if self.needs(*bias) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*bias, Tensor::from_parts(self.value(*bias).shape(), db));
                }
            }
            Op::Affine(x, s) => acc(*x, g.map(|v| v * *s)),
            Op::Relu(x) => acc(
                *x,
                elementwise(g, self.value(*x), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::LeakyRelu(x, s) => acc(
                *x,
                elementwise(
                    g,
                    self.value(*x),
                    |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            gv * *s
                        }
                    },
                ),
            ),
            Op::Tanh(x) => acc(*x, elementwise(g, out, |gv, y| gv * (T::one() - y * y))),
            Op::Sigmoid(x) => acc(*x, elementwise(g, out, |gv, y| gv * y * (T::one() - y))),
            Op::Log(x) => acc(*x, elementwise(g, self.value(*x), |gv, xv| gv / xv)),
            Op::Clamp(x, lo, hi) => acc(
                *x,
                elementwise(g, self.value(*x), |gv, xv| {
                    if xv < *lo || xv > *hi {
                        T::zero()
                    } else {
                        gv
                    }
                }),
            ),
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g.item())),
            Op::Mean(x) => {
                let t = self.value(*x);
                let n = T::of(t.numel().max(1) as f64);
                acc(*x, Tensor::full(t.shape(), g.item() / n));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, Tensor::from_parts(&shape, g.data().to_vec()));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(p, Tensor::from_parts(self.value(p).shape(), d));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        acc(p, Tensor::from_parts(self.value(p).shape(), d));
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let t = self.value(*x);
                let (c, w) = (t.cols(), g.cols());
                let mut d = vec![T::zero(); t.numel()];
                for r in 0..t.rows() {
                    d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                }
                acc(*x, Tensor::from_parts(t.shape(), d));
            }
            Op::GatherRows(x, indices) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut d = vec![T::zero(); t.numel()];
                for (i, &src) in indices.iter().enumerate() {
                    for (dst, &v) in d[src * c..(src + 1) * c].iter_mut().zip(g.row(i)) {
                        *dst += v;
                    }
                }
                acc(*x, Tensor::from_parts(t.shape(), d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = g.cols();
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for (grow, hrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    if self.needs(*gamma) {
                        acc(*gamma, Tensor::from_parts(self.value(*gamma).shape(), dg));
                    }
                    if self.needs(*beta) {
                        acc(*beta, Tensor::from_parts(self.value(*beta).shape(), db));
                    }
                }
                if self.needs(*x) {
                    let n = T::of(c as f64);
                    let mut dx = Vec::with_capacity(g.numel());
                    for (i, (grow, hrow)) in g.data().chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..c {
                            let d = grow[j] * gam[j];
                            sum_d += d;
                            sum_dh += d * hrow[j];
                        }
                        for j in 0..c {
                            let d = grow[j] * gam[j];
                            dx.push(rstd[i] / n * (n * d - sum_d - hrow[j] * sum_dh));
                        }
                    }
                    acc(*x, Tensor::from_parts(g.shape(), dx));
                }
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let deltas = op.backward(&values, out, g, &needs);
                for ((&v, delta), need) in inputs.iter().zip(deltas).zip(needs) {
                    if let (Some(delta), true) = (delta, need) {
                        acc(v, delta);
                    }
                }
            }
        }
    }
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape(), data)
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Central finite-difference gradient of `f` at `x`, used by gradient checks.
pub fn numeric_gradient<T: Scalar>(
    x: &Tensor<T>,
    step: f64,
    mut f: impl FnMut(&Tensor<T>) -> f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + T::of(step);
            let plus = f(&probe);
            probe.data_mut()[i] = orig - T::of(step);
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn check(build: impl Fn(&mut Tape<f64>, Var) -> Var, x0: Tensor<f64>) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).unwrap().clone();
        let numeric = numeric_gradient(&x0, 1e-6, |p| {
            let mut tape = Tape::new();
            let x = tape.leaf(p.clone());
            let y = build(&mut tape, x);
            tape.value(y).item()
        });
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn matmul_bias_tanh_gradient() {
        let w = t(&[3, 2], &[0.3, -0.2, 0.1, 0.5, -0.7, 0.2]);
        check(
            move |tape, x| {
                let w = tape.constant(w.clone());
                let b = tape.constant(t(&[2], &[0.1, -0.1]));
                let h = tape.matmul(x, w).unwrap();
                let h = tape.add_row(h, b).unwrap();
                let h = tape.tanh(h);
                let h = tape.mul(h, h).unwrap();
                tape.sum(h)
            },
            t(&[2, 3], &[0.5, -1.0, 0.3, 0.2, 0.8, -0.4]),
        );
    }

    #[test]
    fn layer_norm_gradient() {
        let coeffs = t(&[2, 4], &[1.0, -2.0, 0.5, 3.0, 0.1, 0.2, -0.3, 0.4]);
        check(
            move |tape, x| {
                let g = tape.constant(t(&[4], &[1.0, 0.5, 2.0, -1.0]));
                let b = tape.constant(t(&[4], &[0.0, 0.1, 0.2, 0.3]));
                let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
                let c = tape.constant(coeffs.clone());
                let y = tape.mul(y, c).unwrap();
                tape.sum(y)
            },
            t(&[2, 4], &[0.5, -1.0, 0.3, 2.0, 0.2, 0.8, -0.4, 0.0]),
        );
    }

    #[test]
    fn structural_ops_gradient() {
        check(
            |tape, x| {
                let a = tape.slice_cols(x, 1, 3).unwrap();
                let b = tape.gather_rows(x, &[1, 0, 1]).unwrap();
                let b = tape.slice_cols(b, 0, 2).unwrap();
                let s = tape.sigmoid(b);
                let s = tape.clamp(s, 0.0, 0.9);
                let l = tape.log(s);
                let c = tape.concat_rows(&[a, l]).unwrap();
                let c = tape.leaky_relu(c, 0.2);
                let d = tape.concat_cols(&[c, c]).unwrap();
                let d = tape.affine(d, 2.0, 1.0);
                let d = tape.relu(d);
                let r = tape.reshape(d, &[20]).unwrap();
                tape.mean(r)
            },
            t(&[2, 3], &[0.5, -1.0, 0.3, 0.2, 0.8, -0.4]),
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let x = tape.leaf(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }
}
