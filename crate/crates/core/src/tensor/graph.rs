use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::{matmul, matmul_nt, matmul_tn, Real, Tensor};
use crate::error::{Error, Result};

/// Inputs to `log` are floored here so underflowed probabilities stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, T, T),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    MaxPool(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Mse(Var, Var),
    BceWithLogits(Var, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A tape of tensor operations. Values are computed eagerly on construction;
/// [`Graph::backward`] walks the tape in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn broadcast_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[inline]
fn bidx(i: usize, j: usize, (r, c): (usize, usize)) -> usize {
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

/// Sums a gradient of shape `out` down to the broadcast operand shape `to`.
fn reduce_to<T: Real>(g: &[T], out: (usize, usize), to: (usize, usize)) -> Vec<T> {
    if out == to {
        return g.to_vec();
    }
    let mut acc = vec![T::zero(); to.0 * to.1];
    for i in 0..out.0 {
        for j in 0..out.1 {
            acc[bidx(i, j, to)] += g[i * out.1 + j];
        }
    }
    acc
}

fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = dims(x);
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row_slice(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - m).exp();
            sum += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= sum;
        }
    }
    Tensor::new(&[r, c], out)
}

fn logsumexp_rows<T: Real>(x: &Tensor<T>) -> Vec<T> {
    (0..x.rows())
        .map(|i| {
            let row = x.row_slice(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
        })
        .collect()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf holding input data or a constant.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf bound to a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.tensor(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ka) = dims(self.value(a));
        let (kb, cb) = dims(self.value(b));
        if ka != kb {
            return Err(Error::shape("matmul", format!("({ra} x {ka}) * ({kb} x {cb})")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), ra, ka, cb);
        Ok(self.push(Tensor::new(&[ra, cb], out), Op::MatMul(a, b)))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, ())> {
        let da = dims(self.value(a));
        let db = dims(self.value(b));
        let (r, c) = broadcast_dims(op, da, db)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(av[bidx(i, j, da)], bv[bidx(i, j, db)]));
            }
        }
        Ok((Tensor::new(&[r, c], out), ()))
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ()) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ()) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ()) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(t, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(t, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::exp);
        self.push(t, Op::Exp(a))
    }

    /// Natural log of `max(x, LOG_FLOOR)`.
    pub fn log(&mut self, a: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        let t = self.value(a).map(|x| x.max(floor).ln());
        self.push(t, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let t = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = softmax_rows(self.value(a));
        self.push(t, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let lse = logsumexp_rows(x);
        let c = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v - lse[k / c])
            .collect();
        let t = Tensor::new(&[x.rows(), c], data);
        self.push(t, Op::LogSoftmax(a))
    }

    /// Row-wise log-sum-exp; output is `rows x 1`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let r = x.rows();
        let t = Tensor::new(&[r, 1], logsumexp_rows(x));
        self.push(t, Op::LogSumExp(a))
    }

    /// Elementwise maximum over rows (the set axis); output is `1 x cols`.
    pub fn max_pool(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = dims(x);
        if r == 0 {
            return Err(Error::shape("max_pool", "empty set"));
        }
        let mut arg = vec![0usize; c];
        let mut out = x.row_slice(0).to_vec();
        for i in 1..r {
            for (j, &v) in x.row_slice(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        Ok(self.push(Tensor::new(&[1, c], out), Op::MaxPool(a, arg)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let c: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        Ok(self.push(Tensor::new(&[r, c], out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = dims(x);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x.row_slice(i)[start..start + len]);
        }
        Ok(self.push(Tensor::new(&[r, len], out), Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = dims(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of {r}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(x.row_slice(i));
        }
        Ok(self.push(Tensor::new(&[idx.len(), c], out), Op::GatherRows(a, idx.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::of(x.len().max(1) as f64);
        let s = x.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum across columns; output is `rows x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let r = x.rows();
        let data = (0..r).map(|i| x.row_slice(i).iter().copied().sum()).collect();
        self.push(Tensor::new(&[r, 1], data), Op::SumCols(a))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if dims(x) != dims(y) {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let n = T::of(x.len().max(1) as f64);
        let s = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b)))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if dims(z) != dims(&targets) {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{:?} vs {:?}", z.shape(), targets.shape()),
            ));
        }
        let n = T::of(z.len().max(1) as f64);
        let s = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::BceWithLogits(logits, targets)))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], g: Vec<T>) {
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(g) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape, g)),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            let gd = g.data();
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (r, k) = dims(av);
                    let c = bv.cols();
                    acc(&mut grads, *a, av.shape(), matmul_nt(gd, bv.data(), r, c, k));
                    acc(&mut grads, *b, bv.shape(), matmul_tn(av.data(), gd, r, k, c));
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let out = dims(y);
                    let da = dims(self.value(*a));
                    let db = dims(self.value(*b));
                    acc(&mut grads, *a, self.value(*a).shape(), reduce_to(gd, out, da));
                    let mut gb = reduce_to(gd, out, db);
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    acc(&mut grads, *b, self.value(*b).shape(), gb);
                }
                Op::Mul(a, b) => {
                    let out = dims(y);
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (da, db) = (dims(av), dims(bv));
                    let mut ga = Vec::with_capacity(gd.len());
                    let mut gb = Vec::with_capacity(gd.len());
                    for i in 0..out.0 {
                        for j in 0..out.1 {
                            let gij = gd[i * out.1 + j];
                            ga.push(gij * bv.data()[bidx(i, j, db)]);
                            gb.push(gij * av.data()[bidx(i, j, da)]);
                        }
                    }
                    acc(&mut grads, *a, av.shape(), reduce_to(&ga, out, da));
                    acc(&mut grads, *b, bv.shape(), reduce_to(&gb, out, db));
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, y.shape(), gd.iter().map(|&x| x * *c).collect());
                }
                Op::AddScalar(a) => acc(&mut grads, *a, y.shape(), gd.to_vec()),
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let gx = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Tanh(a) => {
                    let gx = gd.iter().zip(y.data()).map(|(&g, &t)| g * (T::one() - t * t)).collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Sigmoid(a) => {
                    let gx = gd.iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Exp(a) => {
                    let gx = gd.iter().zip(y.data()).map(|(&g, &e)| g * e).collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Log(a) => {
                    let floor = T::of(LOG_FLOOR);
                    let x = self.value(*a).data();
                    let gx = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > floor { g / x } else { T::zero() })
                        .collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Square(a) => {
                    let x = self.value(*a).data();
                    let two = T::of(2.0);
                    let gx = gd.iter().zip(x).map(|(&g, &x)| two * x * g).collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a).data();
                    let gx = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                        .collect();
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::Softmax(a) => {
                    let (r, c) = dims(y);
                    let mut gx = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = &gd[i * c..(i + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        gx.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                    }
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::LogSoftmax(a) => {
                    let (r, c) = dims(y);
                    let mut gx = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = &gd[i * c..(i + 1) * c];
                        let gsum: T = gr.iter().copied().sum();
                        gx.extend(yr.iter().zip(gr).map(|(&ly, &q)| q - ly.exp() * gsum));
                    }
                    acc(&mut grads, *a, y.shape(), gx);
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let sm = softmax_rows(x);
                    let c = x.cols();
                    let gx = sm
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| p * gd[k / c])
                        .collect();
                    acc(&mut grads, *a, x.shape(), gx);
                }
                Op::MaxPool(a, arg) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut gx = vec![T::zero(); x.len()];
                    for (j, &i) in arg.iter().enumerate() {
                        gx[i * c + j] += gd[j];
                    }
                    acc(&mut grads, *a, x.shape(), gx);
                }
                Op::ConcatCols(parts) => {
                    let (r, c) = dims(y);
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let pc = pv.cols();
                        let mut gp = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            gp.extend_from_slice(&gd[i * c + offset..i * c + offset + pc]);
                        }
                        acc(&mut grads, p, pv.shape(), gp);
                        offset += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let (r, c) = dims(x);
                    let len = y.cols();
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, *a, x.shape(), gx);
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut gx = vec![T::zero(); x.len()];
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += gd[k * c + j];
                        }
                    }
                    acc(&mut grads, *a, x.shape(), gx);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, x.shape(), vec![gd[0]; x.len()]);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let n = T::of(x.len().max(1) as f64);
                    acc(&mut grads, *a, x.shape(), vec![gd[0] / n; x.len()]);
                }
                Op::SumCols(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let gx = (0..x.len()).map(|k| gd[k / c]).collect();
                    acc(&mut grads, *a, x.shape(), gx);
                }
                Op::Mse(a, b) => {
                    let (x, t) = (self.value(*a), self.value(*b));
                    let scale = T::of(2.0) * gd[0] / T::of(x.len().max(1) as f64);
                    let ga: Vec<T> = x.data().iter().zip(t.data()).map(|(&p, &q)| scale * (p - q)).collect();
                    let gb = ga.iter().map(|&v| -v).collect();
                    acc(&mut grads, *a, x.shape(), ga);
                    acc(&mut grads, *b, t.shape(), gb);
                }
                Op::BceWithLogits(a, targets) => {
                    let z = self.value(*a);
                    let scale = gd[0] / T::of(z.len().max(1) as f64);
                    let gz = z
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&x, &t)| {
                            let s = if x >= T::zero() {
                                T::one() / (T::one() + (-x).exp())
                            } else {
                                let e = x.exp();
                                e / (T::one() + e)
                            };
                            scale * (s - t)
                        })
                        .collect();
                    acc(&mut grads, *a, z.shape(), gz);
                }
            }
            grads[idx] = Some(g);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Gradients { grads, params }
    }
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to node `v`, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients indexed by [`ParamId`]; every parameter used in
    /// the forward pass gets an entry (zeros when nothing flowed back).
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for &(id, v) in &self.params {
            let g = self
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.tensor(id).shape()));
            out[id.index()] = Some(g);
        }
        out
    }
}
