//! Dense row-major n-dimensional arrays.
//!
//! Tensors are plain values: every operation allocates its result, there are
//! no strided views, and reductions accumulate sequentially so results are
//! reproducible bit for bit.
//!
//! Binary operations broadcast with trailing-dimension rules: shapes are
//! right-aligned, missing leading dimensions count as 1, and each aligned
//! pair must be equal or contain a 1.

mod conv;
mod linalg;
mod reduce;

pub use conv::Conv2dGeometry;
pub use reduce::ReduceOp;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{DType, Float};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Elementwise unary kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    /// Heaviside step: 1 for x > 0, else 0.
    Step,
    Abs,
}

/// Elementwise binary kinds (broadcasting).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b`.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape("broadcast", a, b));
        };
    }
    Ok(out)
}

/// Strides of `shape` when indexed by coordinates of the (larger) `out`
/// shape; broadcast dimensions get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < offset || shape[i - offset] == 1 { 0 } else { own[i - offset] })
        .collect()
}

/// Visits every multi-index of `shape` in row-major order, calling `f` with
/// the flat offsets computed from each stride set.
fn for_each_offset<const N: usize>(shape: &[usize], strides: [&[usize]; N], mut f: impl FnMut([usize; N])) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; N];
    for _ in 0..total {
        f(offs);
        for d in (0..rank).rev() {
            idx[d] += 1;
            for (o, s) in offs.iter_mut().zip(strides.iter()) {
                *o += s[d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(strides.iter()) {
                *o -= s[d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "new",
                shape,
                reason: "element count does not match data length",
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn ones_like(&self) -> Self {
        Self::ones(&self.shape)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::ONE } else { T::ZERO })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
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

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                shape: self.shape.clone(),
                reason: "expected exactly one element",
            });
        }
        Ok(self.data[0])
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Applies `f` pairwise after broadcasting both operands.
    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out = broadcast_shape(&self.shape, &other.shape).map_err(|_| Error::shape(op, &self.shape, &other.shape))?;
        let n = numel(&out);
        let mut data = Vec::with_capacity(n);
        // Common cases: one operand is a trailing block repeated over the
        // leading dimensions of the other (bias add, per-row scaling).
        if out == self.shape && is_suffix(&other.shape, &out) {
            let m = other.data.len().max(1);
            data.extend(self.data.iter().enumerate().map(|(i, &a)| f(a, other.data[i % m])));
        } else if out == other.shape && is_suffix(&self.shape, &out) {
            let m = self.data.len().max(1);
            data.extend(other.data.iter().enumerate().map(|(i, &b)| f(self.data[i % m], b)));
        } else {
            let sa = broadcast_strides(&self.shape, &out);
            let sb = broadcast_strides(&other.shape, &out);
            for_each_offset(&out, [&sa, &sb], |[ia, ib]| data.push(f(self.data[ia], other.data[ib])));
        }
        Ok(Tensor { shape: out, data })
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Self> {
        if T::DTYPE == DType::F64 && matches!(op, UnaryOp::Log | UnaryOp::Sqrt) {
            if let Some(&bad) = self.data.iter().find(|&&v| v < T::ZERO) {
                let name = if op == UnaryOp::Log { "log" } else { "sqrt" };
                return Err(Error::Domain { op: name, value: bad.to_f64() });
            }
        }
        Ok(match op {
            UnaryOp::Neg => self.map(|v| -v),
            UnaryOp::Exp => self.map(T::exp),
            UnaryOp::Log => self.map(T::ln),
            UnaryOp::Sin => self.map(T::sin),
            UnaryOp::Cos => self.map(T::cos),
            UnaryOp::Sqrt => self.map(T::sqrt),
            UnaryOp::Tanh => self.map(T::tanh),
            UnaryOp::Sigmoid => self.map(T::sigmoid),
            UnaryOp::Softplus => self.map(T::softplus),
            UnaryOp::Relu => self.map(|v| if v > T::ZERO { v } else { T::ZERO }),
            UnaryOp::Step => self.map(|v| if v > T::ZERO { T::ONE } else { T::ZERO }),
            UnaryOp::Abs => self.map(T::abs),
        })
    }

    pub fn binary(&self, op: BinaryOp, other: &Self) -> Result<Self> {
        match op {
            BinaryOp::Add => self.zip_with(other, "add", |a, b| a + b),
            BinaryOp::Sub => self.zip_with(other, "sub", |a, b| a - b),
            BinaryOp::Mul => self.zip_with(other, "mul", |a, b| a * b),
            BinaryOp::Div => self.zip_with(other, "div", |a, b| a / b),
            BinaryOp::Pow => self.zip_with(other, "pow", T::powf),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn ln(&self) -> Result<Self> {
        self.unary(UnaryOp::Log)
    }

    pub fn sqrt(&self) -> Result<Self> {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn sin(&self) -> Self {
        self.map(T::sin)
    }

    pub fn powf(&self, p: T) -> Self {
        self.map(|v| v.powf(p))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    /// Broadcasts to `shape` (which must be a broadcast-compatible expansion).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let out = broadcast_shape(&self.shape, shape)?;
        if out != shape {
            return Err(Error::shape("broadcast_to", &self.shape, shape));
        }
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        if is_suffix(&self.shape, shape) {
            let m = self.data.len();
            data.extend((0..n).map(|i| self.data[i % m]));
        } else {
            let s = broadcast_strides(&self.shape, shape);
            for_each_offset(shape, [&s], |[i]| data.push(self.data[i]));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Sums over broadcast dimensions so the result has `shape`; the inverse
    /// of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let expanded = broadcast_shape(shape, &self.shape)?;
        if expanded != self.shape {
            return Err(Error::shape("sum_to", &self.shape, shape));
        }
        let mut data = vec![T::ZERO; numel(shape)];
        if is_suffix(shape, &self.shape) {
            let m = data.len();
            for (i, &v) in self.data.iter().enumerate() {
                data[i % m] += v;
            }
        } else {
            let s = broadcast_strides(shape, &self.shape);
            let mut k = 0;
            for_each_offset(&self.shape, [&s], |[i]| {
                data[i] += self.data[k];
                k += 1;
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { op: "concat", axis, rank });
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = 0;
        for p in parts {
            let compatible = p.rank() == rank && (0..rank).all(|d| d == axis || p.shape[d] == first.shape[d]);
            if !compatible {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
            out_shape[axis] += p.shape[axis];
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                op: "slice",
                axis,
                rank: self.rank(),
            });
        }
        if start + len > self.shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: self.shape.clone(),
                reason: "slice range exceeds axis extent",
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Zero-pads along `axis`; the adjoint of [`Tensor::slice`].
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                op: "pad",
                axis,
                rank: self.rank(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = self.shape[axis];
        let mut shape = self.shape.clone();
        shape[axis] = before + len + after;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            data.extend(core::iter::repeat_n(T::ZERO, before * inner));
            data.extend_from_slice(&self.data[o * len * inner..(o + 1) * len * inner]);
            data.extend(core::iter::repeat_n(T::ZERO, after * inner));
        }
        Ok(Tensor { shape, data })
    }

    /// Row `i` of the leading axis, keeping the remaining dimensions.
    pub fn index_first(&self, i: usize) -> Result<Self> {
        let t = self.slice(0, i, 1)?;
        let shape = self.shape[1..].to_vec();
        t.into_reshaped(&shape)
    }

    /// Gathers rows of the leading axis.
    pub fn select_first(&self, rows: &[usize]) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| Error::invalid("select_first on a scalar"))?;
        let inner = self.numel() / n.max(1);
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidShape {
                    op: "select_first",
                    shape: self.shape.clone(),
                    reason: "row index out of range",
                });
            }
            data.extend_from_slice(&self.data[r * inner..(r + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Tensor { shape, data })
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::ZERO, T::max))
    }
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}
