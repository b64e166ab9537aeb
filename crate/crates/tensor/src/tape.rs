// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode differentiation over a linear tape of 2-D operations.

use crate::error::{shape_err, Error, Result};
use crate::real::{matmul_into, Real};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const BCE_CLAMP: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    SelectRows {
        sources: Vec<Var>,
        index: Vec<(usize, usize)>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    SoftmaxMasked(Var),
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    L1 {
        a: Var,
        target: Vec<T>,
    },
    Bce {
        a: Var,
        target: Vec<T>,
    },
    BceLogits {
        a: Var,
        target: Vec<T>,
    },
    CrossEntropy {
        a: Var,
        classes: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Records operations for one forward pass. Single-threaded; build one tape
/// per independent computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.dims(v);
        vec![r, c]
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn mat(r: usize, c: usize, data: Vec<T>) -> Tensor<T> {
        Tensor::matrix(r, c, data).expect("sizes agree")
    }

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        if ta && tb {
            return Err(Error::Argument("matmul with both operands transposed".into()));
        }
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return shape_err("matmul", &self.shape(a), &self.shape(b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, self.data(a), ta, self.data(b), tb, &mut out, false);
        let g = self.needs(&[a, b]);
        Ok(self.push(Self::mat(m, n, out), Op::MatMul { a, b, ta, tb }, g))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        if self.dims(a) != self.dims(b) {
            return shape_err(name, &self.shape(a), &self.shape(b));
        }
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        Ok((Self::mat(r, c, out), self.needs(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    /// Adds the single row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(bias) != (1, c) {
            return shape_err("add_row", &self.shape(a), &self.shape(bias));
        }
        let b = self.data(bias);
        let out = self
            .data(a)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| *x + *y))
            .collect();
        let g = self.needs(&[a, bias]);
        Ok(self.push(Self::mat(r, c, out), Op::AddRow(a, bias), g))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = self.dims(a);
        let (s, t) = (T::of(scale), T::of(shift));
        let out = self.data(a).iter().map(|x| *x * s + t).collect();
        let g = self.needs(&[a]);
        self.push(Self::mat(r, c, out), Op::Affine(a, s), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Argument("concat of nothing".into()));
        };
        let r = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != r {
                return shape_err("concat_cols", &self.shape(first), &self.shape(p));
            }
        }
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.data(p)[i * pc..(i + 1) * pc]);
            }
        }
        let g = self.needs(parts);
        Ok(self.push(Self::mat(r, c, out), Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Argument("concat of nothing".into()));
        };
        let c = self.dims(first).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            if self.dims(p).1 != c {
                return shape_err("concat_rows", &self.shape(first), &self.shape(p));
            }
            r += self.dims(p).0;
            out.extend_from_slice(self.data(p));
        }
        let g = self.needs(parts);
        Ok(self.push(Self::mat(r, c, out), Op::ConcatRows(parts.to_vec()), g))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + width > c {
            return shape_err("slice_cols", &self.shape(a), &[start, width]);
        }
        let out = self
            .data(a)
            .chunks(c)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let g = self.needs(&[a]);
        Ok(self.push(Self::mat(r, width, out), Op::SliceCols { a, start }, g))
    }

    /// Stacks rows picked from several sources: output row `t` is row
    /// `index[t].1` of `sources[index[t].0]`.
    pub fn select_rows(&mut self, sources: &[Var], index: &[(usize, usize)]) -> Result<Var> {
        let Some(&first) = sources.first() else {
            return Err(Error::Argument("select from nothing".into()));
        };
        let c = self.dims(first).1;
        for &s in sources {
            if self.dims(s).1 != c {
                return shape_err("select_rows", &self.shape(first), &self.shape(s));
            }
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &(s, r) in index {
            if s >= sources.len() || r >= self.dims(sources[s]).0 {
                return Err(Error::Argument(format!("row ({s}, {r}) out of range")));
            }
            out.extend_from_slice(&self.data(sources[s])[r * c..(r + 1) * c]);
        }
        let g = self.needs(sources);
        Ok(self.push(
            Self::mat(index.len(), c, out),
            Op::SelectRows {
                sources: sources.to_vec(),
                index: index.to_vec(),
            },
            g,
        ))
    }

    pub fn rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let index: Vec<(usize, usize)> = rows.iter().map(|&r| (0, r)).collect();
        self.select_rows(&[a], &index)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|x| f(*x)).collect();
        let g = self.needs(&[a]);
        self.push(Self::mat(r, c, out), op, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    /// Row-wise softmax over the entries where `allow` is true; other
    /// entries are treated as minus infinity and come out exactly zero. A
    /// row with nothing allowed is all zeros.
    pub fn softmax_masked(&mut self, a: Var, allow: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if allow.len() != r * c {
            return shape_err("softmax_masked", &self.shape(a), &[allow.len()]);
        }
        let x = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = &allow[i * c..(i + 1) * c];
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, ok)| **ok)
                .map(|(v, _)| *v)
                .fold(T::neg_infinity(), T::max);
            if mx == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - mx).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for j in 0..c {
                out[i * c + j] = out[i * c + j] / total;
            }
        }
        let g = self.needs(&[a]);
        Ok(self.push(Self::mat(r, c, out), Op::SoftmaxMasked(a), g))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        self.softmax_masked(a, &vec![true; r * c])
    }

    /// Per-row normalization with learned `gamma` and `beta` rows.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return shape_err("layer_norm", &self.shape(a), &self.shape(gamma));
        }
        let x = self.data(a);
        let (gm, bt) = (self.data(gamma), self.data(beta));
        let nf = T::of(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gm[j] + bt[j];
            }
        }
        let g = self.needs(&[a, gamma, beta]);
        Ok(self.push(
            Self::mat(r, c, out),
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                rstd,
            },
            g,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let g = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a).len().max(1);
        let s = self.data(a).iter().copied().sum::<T>() / T::of(n as f64);
        let g = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), g)
    }

    /// Column means: `r x c` to `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = vec![T::zero(); c];
        for row in self.data(a).chunks(c.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += *v;
            }
        }
        let inv = T::one() / T::of(r.max(1) as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let g = self.needs(&[a]);
        self.push(Self::mat(1, c, out), Op::MeanRows(a), g)
    }

    fn check_target(&self, name: &'static str, a: Var, target: &[T]) -> Result<()> {
        if self.data(a).len() != target.len() || target.is_empty() {
            return shape_err(name, &self.shape(a), &[target.len()]);
        }
        Ok(())
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, a: Var, target: &[T]) -> Result<Var> {
        self.check_target("l1_loss", a, target)?;
        let n = T::of(target.len() as f64);
        let s = self.data(a).iter().zip(target).map(|(x, t)| (*x - *t).abs()).sum::<T>() / n;
        let g = self.needs(&[a]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::L1 {
                a,
                target: target.to_vec(),
            },
            g,
        ))
    }

    /// Mean binary cross-entropy of probabilities clamped to
    /// `[1e-7, 1 - 1e-7]`; the clamp passes no gradient.
    pub fn bce_loss(&mut self, a: Var, target: &[T]) -> Result<Var> {
        self.check_target("bce_loss", a, target)?;
        let n = T::of(target.len() as f64);
        let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
        let s = -self
            .data(a)
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let p = p.max(lo).min(hi);
                *t * p.ln() + (T::one() - *t) * (T::one() - p).ln()
            })
            .sum::<T>()
            / n;
        let g = self.needs(&[a]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::Bce {
                a,
                target: target.to_vec(),
            },
            g,
        ))
    }

    /// Binary cross-entropy of `sigmoid(a)`, evaluated stably from logits.
    pub fn bce_with_logits(&mut self, a: Var, target: &[T]) -> Result<Var> {
        self.check_target("bce_with_logits", a, target)?;
        let n = T::of(target.len() as f64);
        let s = self
            .data(a)
            .iter()
            .zip(target)
            .map(|(x, t)| softplus(*x) - *t * *x)
            .sum::<T>()
            / n;
        let g = self.needs(&[a]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::BceLogits {
                a,
                target: target.to_vec(),
            },
            g,
        ))
    }

    /// Mean negative log-likelihood of `classes` under row-wise softmax.
    pub fn cross_entropy(&mut self, a: Var, classes: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if classes.len() != r || r == 0 {
            return shape_err("cross_entropy", &self.shape(a), &[classes.len()]);
        }
        if let Some(bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::Argument(format!("class {bad} out of range {c}")));
        }
        let x = self.data(a);
        let mut probs = vec![T::zero(); r * c];
        let mut total = T::zero();
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|v| (*v - mx).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - mx).exp() / z;
            }
            total += z.ln() + mx - row[classes[i]];
        }
        let s = total / T::of(r as f64);
        let g = self.needs(&[a]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::CrossEntropy {
                a,
                classes: classes.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        assert_eq!(self.data(loss).len(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.grad {
                grads[id] = None;
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.propagate(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Grads { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let (yr, yc) = node.value.dims();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = (yr, yc);
                let (ar, ac) = self.dims(*a);
                let k = if *ta { ar } else { ac };
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    match (ta, tb) {
                        (false, false) => matmul_into(m, n, k, gy, false, bd, true, ga, true),
                        (false, true) => matmul_into(m, n, k, gy, false, bd, false, ga, true),
                        _ => matmul_into(k, n, m, bd, false, gy, true, ga, true),
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    match (ta, tb) {
                        (false, false) => matmul_into(k, m, n, ad, true, gy, false, gb, true),
                        (false, true) => matmul_into(n, m, k, gy, true, ad, false, gb, true),
                        _ => matmul_into(k, m, n, ad, false, gy, false, gb, true),
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.acc(grads, *v) {
                        g.iter_mut().zip(gy).for_each(|(g, d)| *g += *d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += *d);
                }
                if let Some(g) = self.acc(grads, *b) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g -= *d);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bd[i];
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * ad[i];
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += *d);
                }
                if let Some(g) = self.acc(grads, *bias) {
                    for row in gy.chunks(yc.max(1)) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += *d);
                    }
                }
            }
            Op::Affine(a, s) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += *d * *s);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    if let Some(g) = self.acc(grads, *p) {
                        for i in 0..yr {
                            for j in 0..pc {
                                g[i * pc + j] += gy[i * yc + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(g) = self.acc(grads, *p) {
                        g.iter_mut().zip(&gy[off..off + len]).for_each(|(g, d)| *g += *d);
                    }
                    off += len;
                }
            }
            Op::SliceCols { a, start } => {
                let ac = self.dims(*a).1;
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..yr {
                        for j in 0..yc {
                            g[i * ac + start + j] += gy[i * yc + j];
                        }
                    }
                }
            }
            Op::SelectRows { sources, index } => {
                for (t, &(s, r)) in index.iter().enumerate() {
                    if let Some(g) = self.acc(grads, sources[s]) {
                        for j in 0..yc {
                            g[r * yc + j] += gy[t * yc + j];
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if y[i] > T::zero() {
                            g[i] += gy[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * y[i] * (T::one() - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * (T::one() - y[i] * y[i]);
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.data(*a);
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += gy[i] * sigmoid(x[i]);
                    }
                }
            }
            Op::SoftmaxMasked(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..yr {
                        let row = &y[i * yc..(i + 1) * yc];
                        let grow = &gy[i * yc..(i + 1) * yc];
                        let dot: T = row.iter().zip(grow).map(|(p, d)| *p * *d).sum();
                        for j in 0..yc {
                            g[i * yc + j] += row[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = self.data(*gamma);
                if let Some(g) = self.acc(grads, *gamma) {
                    for i in 0..yr {
                        for j in 0..yc {
                            g[j] += gy[i * yc + j] * xhat[i * yc + j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *beta) {
                    for i in 0..yr {
                        for j in 0..yc {
                            g[j] += gy[i * yc + j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *a) {
                    let nf = T::of(yc as f64);
                    for i in 0..yr {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..yc {
                            let dh = gy[i * yc + j] * gm[j];
                            s1 += dh;
                            s2 += dh * xhat[i * yc + j];
                        }
                        for j in 0..yc {
                            let dh = gy[i * yc + j] * gm[j];
                            g[i * yc + j] += rstd[i] / nf * (nf * dh - s1 - xhat[i * yc + j] * s2);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    let d = gy[0] / T::of(g.len().max(1) as f64);
                    g.iter_mut().for_each(|g| *g += d);
                }
            }
            Op::MeanRows(a) => {
                let r = self.dims(*a).0;
                if let Some(g) = self.acc(grads, *a) {
                    let inv = T::one() / T::of(r.max(1) as f64);
                    for row in g.chunks_mut(yc.max(1)) {
                        row.iter_mut().zip(gy).for_each(|(g, d)| *g += *d * inv);
                    }
                }
            }
            Op::L1 { a, target } => {
                let x = self.data(*a);
                if let Some(g) = self.acc(grads, *a) {
                    let d = gy[0] / T::of(target.len() as f64);
                    for i in 0..g.len() {
                        let diff = x[i] - target[i];
                        if diff > T::zero() {
                            g[i] += d;
                        } else if diff < T::zero() {
                            g[i] -= d;
                        }
                    }
                }
            }
            Op::Bce { a, target } => {
                let x = self.data(*a);
                let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
                if let Some(g) = self.acc(grads, *a) {
                    let d = gy[0] / T::of(target.len() as f64);
                    for i in 0..g.len() {
                        let p = x[i];
                        if p > lo && p < hi {
                            g[i] += d * (p - target[i]) / (p * (T::one() - p));
                        }
                    }
                }
            }
            Op::BceLogits { a, target } => {
                let x = self.data(*a);
                if let Some(g) = self.acc(grads, *a) {
                    let d = gy[0] / T::of(target.len() as f64);
                    for i in 0..g.len() {
                        g[i] += d * (sigmoid(x[i]) - target[i]);
                    }
                }
            }
            Op::CrossEntropy { a, classes, probs } => {
                let c = self.dims(*a).1;
                if let Some(g) = self.acc(grads, *a) {
                    let d = gy[0] / T::of(classes.len() as f64);
                    for (i, &k) in classes.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == k { T::one() } else { T::zero() };
                            g[i * c + j] += d * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}
