use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    None,
    /// `N(0, 2I)`: a unit-normal latent observed through unit-normal noise.
    StandardNormal2I,
}

impl PriorKind {
    /// `∇ log p(z₀)`.
    pub fn score<T: Float>(self, z0: &Tensor<T>) -> Tensor<T> {
        match self {
            PriorKind::None => z0.zeros_like(),
            PriorKind::StandardNormal2I => z0.scale(T::from_f64(-0.5)),
        }
    }
}

/// Noise covariance `Σ = scale·I` and the marginal of `z₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBayesSetting {
    pub scale: f64,
    pub prior: PriorKind,
}

impl EmpiricalBayesSetting {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid("noise covariance scale must be positive"));
        }
        Ok(())
    }
}

/// `ẑ = z₀ + Σ·score`.
pub fn empirical_bayes_estimate<T: Float>(z0: &Tensor<T>, score: &Tensor<T>, setting: &EmpiricalBayesSetting) -> Result<Tensor<T>> {
    setting.validate()?;
    if z0.shape() != score.shape() {
        return Err(Error::shape("empirical_bayes_estimate", z0.shape(), score.shape()));
    }
    z0.add(&score.scale(T::from_f64(setting.scale)))
}
