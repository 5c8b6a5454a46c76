use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Result of [`Graph::grad`]: one gradient per requested input.
pub struct Gradients<'g, T: Float> {
    vars: Vec<Var<'g, T>>,
    unreachable: Vec<bool>,
}

impl<'g, T: Float> Gradients<'g, T> {
    pub fn get(&self, i: usize) -> Var<'g, T> {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| v.tensor()).collect()
    }

    /// `true` for inputs the output does not depend on; their gradient is zero.
    pub fn unreachable(&self) -> &[bool] {
        &self.unreachable
    }

    pub fn any_unreachable(&self) -> bool {
        self.unreachable.iter().any(|&u| u)
    }
}

impl<T: Float> Graph<T> {
    /// Gradients of the scalar `output` with respect to each of `inputs`.
    ///
    /// With `create_graph` the returned variables are recorded in this graph
    /// and can be differentiated further; otherwise they are detached leaves
    /// holding the same values.
    pub fn grad<'g>(&'g self, output: Var<'g, T>, inputs: &[Var<'g, T>], create_graph: bool) -> Result<Gradients<'g, T>> {
        if output.numel() != 1 {
            return Err(Error::NonScalarOutput(output.shape()));
        }
        let prev = self.recording.replace(create_graph);
        let result = self.backward(output, inputs);
        self.recording.set(prev);
        result
    }

    fn backward<'g>(&'g self, output: Var<'g, T>, inputs: &[Var<'g, T>]) -> Result<Gradients<'g, T>> {
        let n = output.id + 1;
        // Only nodes that depend on some input carry gradient worth computing.
        let mut relevant = vec![false; n];
        for x in inputs {
            if x.id < n {
                relevant[x.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !relevant[id] {
                    let mut any = false;
                    nodes[id].op.for_each_parent(|p| any |= relevant[p]);
                    relevant[id] = any;
                }
            }
        }

        let mut grads: Vec<Option<Var<'g, T>>> = vec![None; n];
        if relevant[output.id] {
            grads[output.id] = Some(self.leaf(Tensor::ones(&output.shape())));
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            if !relevant[id] {
                continue;
            }
            let op = self.op(id);
            if matches!(op, Op::Leaf) {
                continue;
            }
            for (parent, pg) in self.backward_rule(id, &op, g)? {
                if !relevant[parent] {
                    continue;
                }
                grads[parent] = Some(match grads[parent] {
                    Some(acc) => acc.add(pg)?,
                    None => pg,
                });
            }
        }

        let mut vars = Vec::with_capacity(inputs.len());
        let mut unreachable = Vec::with_capacity(inputs.len());
        for x in inputs {
            match grads.get(x.id).copied().flatten() {
                Some(g) => {
                    let g = if self.recording.get() { g } else { g.detach() };
                    vars.push(g);
                    unreachable.push(false);
                }
                None => {
                    vars.push(self.leaf(Tensor::zeros(&x.shape())));
                    unreachable.push(true);
                }
            }
        }
        Ok(Gradients { vars, unreachable })
    }

    /// Parent contributions for node `id` given its upstream gradient `g`,
    /// written entirely in recorded primitives.
    fn backward_rule<'g>(&'g self, id: usize, op: &Op, g: Var<'g, T>) -> Result<Vec<(usize, Var<'g, T>)>> {
        let v = |i: usize| self.var(i);
        let shape_of = |i: usize| self.value_of(i).shape().to_vec();
        let out = v(id);
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(a, g.sum_to(&shape_of(a))?), (b, g.sum_to(&shape_of(b))?)],
            Op::Sub(a, b) => vec![(a, g.sum_to(&shape_of(a))?), (b, g.neg()?.sum_to(&shape_of(b))?)],
            Op::Mul(a, b) => vec![(a, g.mul(v(b))?.sum_to(&shape_of(a))?), (b, g.mul(v(a))?.sum_to(&shape_of(b))?)],
            Op::Div(a, b) => vec![
                (a, g.div(v(b))?.sum_to(&shape_of(a))?),
                (b, g.mul(out)?.div(v(b))?.neg()?.sum_to(&shape_of(b))?),
            ],
            Op::Neg(a) => vec![(a, g.neg()?)],
            Op::Scale(a, s) => vec![(a, g.scale(s)?)],
            Op::AddScalar(a) => vec![(a, g)],
            Op::Powf(a, p) => vec![(a, v(a).powf(p - 1.0)?.scale(p)?.mul(g)?)],
            Op::Exp(a) => vec![(a, g.mul(out)?)],
            Op::Log(a) => vec![(a, g.div(v(a))?)],
            Op::Sin(a) => vec![(a, g.mul(v(a).cos()?)?)],
            Op::Cos(a) => vec![(a, g.mul(v(a).sin()?)?.neg()?)],
            Op::Sqrt(a) => vec![(a, g.div(out)?.scale(0.5)?)],
            Op::Tanh(a) => {
                let d = out.square()?.neg()?.add_scalar(1.0)?;
                vec![(a, g.mul(d)?)]
            }
            Op::Sigmoid(a) => {
                let d = out.mul(out.neg()?.add_scalar(1.0)?)?;
                vec![(a, g.mul(d)?)]
            }
            Op::Softplus(a) => vec![(a, g.mul(v(a).sigmoid()?)?)],
            // relu' is a step function: its own derivative is zero.
            Op::Relu(a) => vec![(a, g.mul(v(a).step())?)],
            Op::Elu(a) => {
                // elu'(x) = 1 for x > 0, e^x = elu(x) + 1 otherwise
                let pos = v(a).step();
                let neg = self.leaf(pos.value().map(|m| T::ONE - m));
                let d = out.add_scalar(1.0)?.mul(neg)?.add(pos)?;
                vec![(a, g.mul(d)?)]
            }
            Op::MatMul(a, b) => vec![(a, g.matmul(v(b).transpose()?)?), (b, v(a).transpose()?.matmul(g)?)],
            Op::Transpose(a) => vec![(a, g.transpose()?)],
            Op::Reshape(a) => vec![(a, g.reshape(&shape_of(a))?)],
            Op::SumTo(a) => vec![(a, g.broadcast_to(&shape_of(a))?)],
            Op::BroadcastTo(a) => vec![(a, g.sum_to(&shape_of(a))?)],
            Op::Concat(ref parts, axis) => {
                let mut res = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let len = shape_of(p)[axis];
                    res.push((p, g.slice(axis, start, len)?));
                    start += len;
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let full = shape_of(x)[axis];
                let len = g.shape()[axis];
                vec![(x, g.pad(axis, start, full - start - len)?)]
            }
            Op::Pad { x, axis, before } => {
                let len = shape_of(x)[axis];
                vec![(x, g.slice(axis, before, len)?)]
            }
            Op::Conv2d { x, w, geom } => {
                let xs = shape_of(x);
                let ws = shape_of(w);
                vec![
                    (x, g.conv2d_transpose(v(w), geom, Some((xs[2], xs[3])))?),
                    (w, v(x).conv2d_weight(g, geom, (ws[2], ws[3]))?),
                ]
            }
            Op::Conv2dTranspose { y, w, geom } => {
                let ws = shape_of(w);
                vec![(y, g.conv2d(v(w), geom)?), (w, g.conv2d_weight(v(y), geom, (ws[2], ws[3]))?)]
            }
            Op::Conv2dWeight { x, y, geom } => {
                let xs = shape_of(x);
                vec![(x, v(y).conv2d_transpose(g, geom, Some((xs[2], xs[3])))?), (y, v(x).conv2d(g, geom)?)]
            }
            Op::Upsample(a, f) => vec![(a, g.sum_pool(f)?)],
            Op::SumPool(a, f) => vec![(a, g.upsample(f)?)],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    #[test]
    fn square_derivative() {
        let g = Graph::<f64>::new();
        let x = g.scalar(3.0);
        let y = x.square().unwrap();
        let d = g.grad(y, &[x], false).unwrap();
        assert_eq!(d.get(0).value().item().unwrap(), 6.0);
    }

    #[test]
    fn second_derivative_of_sin() {
        for (at, expect) in [(0.0, 0.0), (FRAC_PI_2, -1.0)] {
            let g = Graph::<f64>::new();
            let x = g.scalar(at);
            let y = x.sin().unwrap();
            let d1 = g.grad(y, &[x], true).unwrap().get(0);
            let d2 = g.grad(d1, &[x], true).unwrap().get(0);
            assert!((d2.value().item().unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_output_rejected() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::ones(&[3]));
        assert!(matches!(g.grad(x.exp().unwrap(), &[x], false), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn unreachable_input_is_zero_and_flagged() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::ones(&[2]));
        let u = g.leaf(Tensor::ones(&[3]));
        let y = x.sum().unwrap();
        let d = g.grad(y, &[x, u], false).unwrap();
        assert_eq!(d.unreachable(), &[false, true]);
        assert_eq!(d.get(1).tensor(), Tensor::zeros(&[3]));
    }

    #[test]
    fn detached_and_graph_gradients_agree() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
        let y = x.elu().unwrap().mul(x.sin().unwrap()).unwrap().sum().unwrap();
        let a = g.grad(y, &[x], true).unwrap().get(0);
        let b = g.grad(y, &[x], false).unwrap().get(0);
        assert_eq!(a.tensor(), b.tensor());
        assert!(!a.is_leaf());
        assert!(b.is_leaf());
        // detached gradient cannot be differentiated further
        let d = g.grad(b.sum().unwrap(), &[x], false).unwrap();
        assert!(d.any_unreachable());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.scalar(2.0);
        let y = x.mul(x).unwrap().add(x).unwrap();
        let d = g.grad(y, &[x], false).unwrap();
        assert_eq!(d.get(0).value().item().unwrap(), 5.0);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let g = Graph::<f64>::new();
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let x = g.leaf(t.clone());
        let y = x.exp().unwrap().sum().unwrap();
        let _ = g.grad(y, &[x], true).unwrap();
        assert_eq!(*x.value(), t);
    }

    #[test]
    fn relu_second_derivative_is_zero() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(vec![-1.5, 0.5, 2.0]));
        let y = x.relu().unwrap().square().unwrap().sum().unwrap();
        let d1 = g.grad(y, &[x], true).unwrap().get(0);
        // d/dx relu(x)^2 = 2 relu(x); its derivative wrt x is 2·step(x)
        let d2 = g.grad(d1.sum().unwrap(), &[x], false).unwrap().get(0);
        assert_eq!(d2.tensor().data(), &[0.0, 2.0, 2.0]);
        let h = g.grad(x.relu().unwrap().sum().unwrap(), &[x], true).unwrap().get(0);
        let h2 = g.grad(h.sum().unwrap(), &[x], false).unwrap();
        assert_eq!(h2.get(0).tensor().data(), &[0.0, 0.0, 0.0]);
    }
}
