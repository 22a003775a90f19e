//! Dense tensors with a tape-based reverse-mode autodiff graph.
//!
//! Every op works on the 2-D view of a tensor: the last axis is the column
//! axis and all leading axes are folded into rows. Models run in `f32`;
//! gradient checks instantiate the same code with `f64`.

mod adam;
mod graph;
mod mlp;
mod params;

use std::fmt::Debug;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var, LOG_FLOOR};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use params::{ParamId, ParamStore};

/// Scalar element type of tensors and graphs.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "tensors have 1 to 3 axes, got {shape:?}"
        );
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match data length");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::new(shape, vec![v; shape.iter().product()])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(&[1, 1], vec![v])
    }

    pub fn row(values: &[T]) -> Self {
        Tensor::new(&[1, values.len()], values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Tensor::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn rows(&self) -> usize {
        if self.cols() == 0 {
            self.shape[..self.shape.len() - 1].iter().product()
        } else {
            self.data.len() / self.cols()
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }
}

/// `a (r x k) * b (k x c)`, row by row so each output row depends only on its input row.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (r x c) * b^T` where `b` is `(k x c)`; result `r x k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], r: usize, c: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * k];
    for i in 0..r {
        let arow = &a[i * c..(i + 1) * c];
        for j in 0..k {
            let brow = &b[j * c..(j + 1) * c];
            out[i * k + j] = arow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    out
}

/// `a^T * b` where `a` is `(r x k)` and `b` is `(r x c)`; result `k x c`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
