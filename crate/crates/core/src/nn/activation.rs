use core::fmt;
use core::str::FromStr;

use alloc::string::ToString;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sin,
    Relu,
    LeakyRelu,
    Tanh,
    Elu,
    Softplus,
    Swish,
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 8] = [
        ActivationKind::Sin,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Tanh,
        ActivationKind::Elu,
        ActivationKind::Softplus,
        ActivationKind::Swish,
        ActivationKind::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sin => "sin",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leakyrelu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Elu => "elu",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Swish => "swish",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }

    /// Whether the second derivative vanishes wherever it is defined.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, ActivationKind::Relu | ActivationKind::LeakyRelu)
    }

    /// Applies the nonlinearity to a recorded variable. `w0` scales the
    /// argument of `sin` (SIREN frequency); other kinds ignore it.
    pub fn apply<'g, T: Float>(self, x: Var<'g, T>, w0: f64) -> Result<Var<'g, T>> {
        match self {
            ActivationKind::Sin => {
                if w0 == 1.0 {
                    x.sin()
                } else {
                    x.scale(w0)?.sin()
                }
            }
            ActivationKind::Relu => x.relu(),
            ActivationKind::LeakyRelu => x.relu()?.sub(x.neg()?.relu()?.scale(LEAKY_SLOPE)?),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Elu => x.elu(),
            ActivationKind::Softplus => x.softplus(),
            ActivationKind::Swish => x.mul(x.sigmoid()?),
            ActivationKind::Sigmoid => x.sigmoid(),
        }
    }

    /// `(f, f′, f″)` at `x` (`w0 = 1`), by differentiating the recorded
    /// graph twice.
    pub fn derivatives(self, x: f64) -> Result<(f64, f64, f64)> {
        let g = crate::autodiff::Graph::<f64>::new();
        let xv = g.scalar(x);
        let y = self.apply(xv, 1.0)?;
        let d1 = g.grad(y, &[xv], true)?.get(0);
        let d2 = g.grad(d1, &[xv], false)?.get(0);
        Ok((y.value().item()?, d1.value().item()?, d2.value().item()?))
    }

    /// Plain-tensor evaluation (`w0 = 1`).
    pub fn eval<T: Float>(self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::from_f64(LEAKY_SLOPE);
        match self {
            ActivationKind::Sin => x.map(T::sin),
            ActivationKind::Relu => x.map(|v| v.max(T::ZERO)),
            ActivationKind::LeakyRelu => x.map(|v| if v > T::ZERO { v } else { v * slope }),
            ActivationKind::Tanh => x.map(T::tanh),
            ActivationKind::Elu => x.map(|v| if v > T::ZERO { v } else { v.exp() - T::ONE }),
            ActivationKind::Softplus => x.map(T::softplus),
            ActivationKind::Swish => x.map(|v| v * v.sigmoid()),
            ActivationKind::Sigmoid => x.map(T::sigmoid),
        }
    }
}

/// Evaluates an activation given by name.
pub fn activation<T: Float>(kind: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(kind.parse::<ActivationKind>()?.eval(x))
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{check_gradient, check_second_order};
    use alloc::vec;

    fn derivs(kind: ActivationKind, x: f64) -> (f64, f64, f64) {
        kind.derivatives(x).unwrap()
    }

    #[test]
    fn elu_values() {
        assert_eq!(ActivationKind::Elu.eval(&Tensor::scalar(0.0f64)).item().unwrap(), 0.0);
        let v = ActivationKind::Elu.eval(&Tensor::scalar(-1.0f64)).item().unwrap();
        assert!((v - (libm::exp(-1.0) - 1.0)).abs() < 1e-15);
        assert!((v + 0.632).abs() < 1e-3);
    }

    #[test]
    fn swish_at_origin() {
        let (f, d1, _) = derivs(ActivationKind::Swish, 0.0);
        assert_eq!(f, 0.0);
        assert_eq!(d1, 0.5);
    }

    #[test]
    fn relu_second_derivative_exactly_zero() {
        for x in [-2.0, -0.3, 0.7, 5.0] {
            assert_eq!(derivs(ActivationKind::Relu, x).2, 0.0);
            assert_eq!(derivs(ActivationKind::LeakyRelu, x).2, 0.0);
        }
    }

    /// Closed-form (f, f', f'') for each kind.
    fn closed_form(kind: ActivationKind, x: f64) -> (f64, f64, f64) {
        let s = 1.0 / (1.0 + libm::exp(-x));
        match kind {
            ActivationKind::Sin => (libm::sin(x), libm::cos(x), -libm::sin(x)),
            ActivationKind::Relu => (x.max(0.0), if x > 0.0 { 1.0 } else { 0.0 }, 0.0),
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    (LEAKY_SLOPE * x, LEAKY_SLOPE, 0.0)
                }
            }
            ActivationKind::Tanh => {
                let t = libm::tanh(x);
                (t, 1.0 - t * t, -2.0 * t * (1.0 - t * t))
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    (libm::exp(x) - 1.0, libm::exp(x), libm::exp(x))
                }
            }
            ActivationKind::Softplus => (libm::log1p(libm::exp(x)), s, s * (1.0 - s)),
            ActivationKind::Swish => (x * s, s + x * s * (1.0 - s), s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))),
            ActivationKind::Sigmoid => (s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s)),
        }
    }

    #[test]
    fn symbolic_table_matches_autodiff() {
        for kind in ActivationKind::ALL {
            let mut max_f2 = 0.0f64;
            for x in [-1.0, 0.5, 2.0] {
                let got = derivs(kind, x);
                let want = closed_form(kind, x);
                assert!((got.0 - want.0).abs() < 1e-12, "{kind} f({x})");
                assert!((got.1 - want.1).abs() < 1e-12, "{kind} f'({x})");
                assert!((got.2 - want.2).abs() < 1e-12, "{kind} f''({x})");
                max_f2 = max_f2.max(got.2.abs());
            }
            if kind.is_piecewise_linear() {
                assert_eq!(max_f2, 0.0, "{kind}");
            } else {
                assert!(max_f2 > 0.01, "{kind}");
            }
        }
    }

    #[test]
    fn finite_difference_checks_away_from_kinks() {
        let x = Tensor::from_vec(vec![-1.7, -0.4, -0.01, 0.02, 0.6, 1.9]);
        for kind in ActivationKind::ALL {
            let r1 = check_gradient(|_, v| kind.apply(v, 1.0)?.sum(), &x, 1e-5).unwrap();
            assert!(r1.max_rel_error <= 1e-4, "{kind} first order {}", r1.max_rel_error);
            let r2 = check_second_order(|_, v| kind.apply(v, 1.0)?.sum(), &x, 1e-5).unwrap();
            assert!(r2.max_rel_error <= 1e-3, "{kind} second order {}", r2.max_rel_error);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("ELU".parse::<ActivationKind>().unwrap(), ActivationKind::Elu);
        assert!(matches!("gelu".parse::<ActivationKind>(), Err(Error::UnknownActivation(_))));
        assert!(activation("mish", &Tensor::scalar(1.0f64)).is_err());
    }
}
