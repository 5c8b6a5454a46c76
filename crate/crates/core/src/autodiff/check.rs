//! Central finite-difference verification of first and second derivatives.
//!
//! Discrepancies are reported per component as
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`, i.e. relative
//! for gradients of meaningful size and absolute near zero.

use alloc::vec::Vec;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst per-component discrepancy.
    pub max_rel_error: f64,
    pub analytic: Tensor<f64>,
    pub numeric: Tensor<f64>,
}

impl GradCheck {
    fn compare(analytic: Tensor<f64>, numeric: Tensor<f64>) -> Self {
        let max_rel_error = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
            .fold(0.0, f64::max);
        GradCheck {
            max_rel_error,
            analytic,
            numeric,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Pins a closure to the higher-ranked signature the checkers expect, so it
/// can be stored and reused.
pub fn objective<F>(f: F) -> F
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    f
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let y = f(&g, g.leaf(x.clone()))?;
    let v = y.value().item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    Ok(v)
}

fn analytic_grad<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = f(&g, xv)?;
    if !y.value().item()?.is_finite() {
        return Err(Error::NonFinite("finite-difference objective".into()));
    }
    Ok(g.grad(y, &[xv], false)?.get(0).tensor())
}

fn perturbed(x: &Tensor<f64>, i: usize, delta: f64) -> Tensor<f64> {
    let mut p = x.clone();
    p.data_mut()[i] += delta;
    p
}

/// Compares the autodiff gradient of scalar `f` at `x` with central
/// differences of step `eps`.
pub fn check_gradient<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = analytic_grad(&f, x)?;
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let hi = eval(&f, &perturbed(x, i, eps))?;
        let lo = eval(&f, &perturbed(x, i, -eps))?;
        numeric.push((hi - lo) / (2.0 * eps));
    }
    Ok(GradCheck::compare(analytic, Tensor::new(x.shape().to_vec(), numeric)?))
}

/// Compares the Hessian obtained by differentiating the recorded gradient
/// (grad of grad) with central differences of the first gradient.
/// Both are returned as `(n, n)` matrices with `n = x.numel()`.
pub fn check_second_order<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let n = x.numel();
    let mut analytic = Vec::with_capacity(n * n);
    {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = f(&g, xv)?;
        if !y.value().item()?.is_finite() {
            return Err(Error::NonFinite("finite-difference objective".into()));
        }
        let grad = g.grad(y, &[xv], true)?.get(0);
        for i in 0..n {
            let mut e = Tensor::zeros(x.shape());
            e.data_mut()[i] = 1.0;
            let component = grad.mul(g.leaf(e))?.sum()?;
            let row = g.grad(component, &[xv], false)?.get(0).tensor();
            analytic.extend_from_slice(row.data());
        }
    }
    let mut numeric = Vec::with_capacity(n * n);
    for i in 0..n {
        let hi = analytic_grad(&f, &perturbed(x, i, eps))?;
        let lo = analytic_grad(&f, &perturbed(x, i, -eps))?;
        // column i of the Hessian; stored transposed and fixed up below
        numeric.extend(hi.data().iter().zip(lo.data()).map(|(a, b)| (a - b) / (2.0 * eps)));
    }
    let numeric = Tensor::new(alloc::vec![n, n], numeric)?.transpose()?;
    Ok(GradCheck::compare(Tensor::new(alloc::vec![n, n], analytic)?, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n], |i| ((i * 7 + 3) as f64 * 0.61).sin() * 1.7)
    }

    #[test]
    fn sum_of_squares() {
        let r = check_gradient(|_, x| x.square()?.sum(), &sample(10), 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn sum_of_sines_second_order() {
        let r = check_second_order(|_, x| x.sin()?.sum(), &sample(6), 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
        for i in 0..6 {
            let expect = -sample(6).data()[i].sin();
            assert!((r.analytic.data()[i * 6 + i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_function() {
        fn f<'g>(g: &'g Graph<f64>, _x: Var<'g, f64>) -> Result<Var<'g, f64>> {
            Ok(g.scalar(4.0))
        }
        let r = check_gradient(f, &sample(4), 1e-5).unwrap();
        assert!(r.analytic.data().iter().chain(r.numeric.data()).all(|v| v.abs() <= 1e-8));
        let r2 = check_second_order(f, &sample(4), 1e-5).unwrap();
        assert!(r2.analytic.data().iter().chain(r2.numeric.data()).all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn non_finite_objective_rejected() {
        let x = Tensor::from_vec(alloc::vec![0.0, 1.0]);
        let r = check_gradient(|_, x| x.ln()?.sum(), &x, 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
