use alloc::vec::Vec;

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::{BinaryOp, Conv2dGeometry, Tensor, UnaryOp};

impl<'g, T: Float> Var<'g, T> {
    fn same_graph(&self, other: &Var<'g, T>) {
        assert!(core::ptr::eq(self.graph, other.graph), "variables belong to different graphs");
    }

    fn binary(self, other: Var<'g, T>, op: BinaryOp, mk: fn(usize, usize) -> Op) -> Result<Var<'g, T>> {
        self.same_graph(&other);
        let v = self.value().binary(op, &other.value())?;
        Ok(self.graph.push(mk(self.id, other.id), v))
    }

    fn unary(self, op: UnaryOp, mk: fn(usize) -> Op) -> Result<Var<'g, T>> {
        let v = self.value().unary(op)?;
        Ok(self.graph.push(mk(self.id), v))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryOp::Add, Op::Add)
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryOp::Sub, Op::Sub)
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryOp::Mul, Op::Mul)
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryOp::Div, Op::Div)
    }

    pub fn neg(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Neg, Op::Neg)
    }

    pub fn scale(self, s: f64) -> Result<Var<'g, T>> {
        let v = self.value().scale(T::from_f64(s));
        Ok(self.graph.push(Op::Scale(self.id, s), v))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'g, T>> {
        let v = self.value().add_scalar(T::from_f64(s));
        Ok(self.graph.push(Op::AddScalar(self.id), v))
    }

    pub fn powf(self, p: f64) -> Result<Var<'g, T>> {
        let v = self.value().powf(T::from_f64(p));
        Ok(self.graph.push(Op::Powf(self.id, p), v))
    }

    pub fn square(self) -> Result<Var<'g, T>> {
        self.mul(self)
    }

    pub fn exp(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Exp, Op::Exp)
    }

    pub fn ln(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Log, Op::Log)
    }

    pub fn sin(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Sin, Op::Sin)
    }

    pub fn cos(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Cos, Op::Cos)
    }

    pub fn sqrt(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Sqrt, Op::Sqrt)
    }

    pub fn tanh(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Tanh, Op::Tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Sigmoid, Op::Sigmoid)
    }

    pub fn softplus(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Softplus, Op::Softplus)
    }

    pub fn relu(self) -> Result<Var<'g, T>> {
        self.unary(UnaryOp::Relu, Op::Relu)
    }

    /// `x` for `x > 0`, `e^x − 1` otherwise.
    pub fn elu(self) -> Result<Var<'g, T>> {
        let v = self.value().map(|x| if x > T::ZERO { x } else { x.exp() - T::ONE });
        Ok(self.graph.push(Op::Elu(self.id), v))
    }

    /// Heaviside step of the value. Piecewise constant, so the result is a
    /// detached leaf.
    pub fn step(self) -> Var<'g, T> {
        let v = self.value().unary(UnaryOp::Step).expect("step has no domain restriction");
        self.graph.leaf(v)
    }

    /// 2-D matrix product; a rank-3 left operand is treated as a batch of
    /// row blocks sharing the right operand.
    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&rhs);
        let shape = self.shape();
        if shape.len() == 3 {
            let flat = self.reshape(&[shape[0] * shape[1], shape[2]])?;
            let out = flat.matmul(rhs)?;
            let n = out.shape()[1];
            return out.reshape(&[shape[0], shape[1], n]);
        }
        if shape.len() != 2 {
            return Err(Error::shape("matmul", &shape, &rhs.shape()));
        }
        let v = self.value().matmul(&rhs.value())?;
        Ok(self.graph.push(Op::MatMul(self.id, rhs.id), v))
    }

    pub fn transpose(self) -> Result<Var<'g, T>> {
        let v = self.value().transpose()?;
        Ok(self.graph.push(Op::Transpose(self.id), v))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        if self.shape() == shape {
            return Ok(self);
        }
        let v = self.value().reshape(shape)?;
        Ok(self.graph.push(Op::Reshape(self.id), v))
    }

    pub fn sum_to(self, shape: &[usize]) -> Result<Var<'g, T>> {
        if self.shape() == shape {
            return Ok(self);
        }
        let v = self.value().sum_to(shape)?;
        Ok(self.graph.push(Op::SumTo(self.id), v))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g, T>> {
        if self.shape() == shape {
            return Ok(self);
        }
        let v = self.value().broadcast_to(shape)?;
        Ok(self.graph.push(Op::BroadcastTo(self.id), v))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'g, T>> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Result<Var<'g, T>> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sum over `axes`; the axes are removed unless `keepdim`.
    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if axes.is_empty() {
            return Err(Error::EmptyAxes { op: "sum_axes" });
        }
        let mut keep = shape.clone();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::InvalidAxis {
                    op: "sum_axes",
                    axis: a,
                    rank: shape.len(),
                });
            }
            keep[a] = 1;
        }
        let s = self.sum_to(&keep)?;
        if keepdim {
            return Ok(s);
        }
        let squeezed: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).map(|d| shape[d]).collect();
        s.reshape(&squeezed)
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        self.sum_axes(axes, keepdim)?.scale(1.0 / count.max(1) as f64)
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let v = self.value().slice(axis, start, len)?;
        Ok(self.graph.push(Op::Slice { x: self.id, axis, start }, v))
    }

    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Var<'g, T>> {
        let v = self.value().pad(axis, before, after)?;
        Ok(self.graph.push(Op::Pad { x: self.id, axis, before }, v))
    }

    pub fn conv2d(self, w: Var<'g, T>, geom: Conv2dGeometry) -> Result<Var<'g, T>> {
        self.same_graph(&w);
        let v = self.value().conv2d(&w.value(), geom)?;
        Ok(self.graph.push(Op::Conv2d { x: self.id, w: w.id, geom }, v))
    }

    /// Transposed convolution of `self` (output space) with filters `w`.
    pub fn conv2d_transpose(self, w: Var<'g, T>, geom: Conv2dGeometry, out_hw: Option<(usize, usize)>) -> Result<Var<'g, T>> {
        self.same_graph(&w);
        let v = self.value().conv2d_transpose(&w.value(), geom, out_hw)?;
        Ok(self.graph.push(Op::Conv2dTranspose { y: self.id, w: w.id, geom }, v))
    }

    /// Filter-space adjoint: `self` is the image batch, `y` the output-space tensor.
    pub fn conv2d_weight(self, y: Var<'g, T>, geom: Conv2dGeometry, kernel: (usize, usize)) -> Result<Var<'g, T>> {
        self.same_graph(&y);
        let v = self.value().conv2d_weight(&y.value(), geom, kernel)?;
        Ok(self.graph.push(Op::Conv2dWeight { x: self.id, y: y.id, geom }, v))
    }

    pub fn upsample(self, factor: usize) -> Result<Var<'g, T>> {
        let v = self.value().upsample_nearest(factor)?;
        Ok(self.graph.push(Op::Upsample(self.id, factor), v))
    }

    pub fn sum_pool(self, factor: usize) -> Result<Var<'g, T>> {
        let v = self.value().sum_pool(factor)?;
        Ok(self.graph.push(Op::SumPool(self.id, factor), v))
    }
}

impl<T: Float> Graph<T> {
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| &**v).collect();
        let v = Tensor::concat(&refs, axis)?;
        Ok(self.push(Op::Concat(parts.iter().map(|p| p.id).collect(), axis), v))
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_, T> {
        self.leaf(Tensor::zeros(shape))
    }

    pub fn ones(&self, shape: &[usize]) -> Var<'_, T> {
        self.leaf(Tensor::ones(shape))
    }
}
