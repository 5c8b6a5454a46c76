use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0 && self.lr.is_finite() && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(Error::invalid("Adam needs lr > 0, betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

/// Moments for every parameter of a [`ParamSet`], index-aligned with it.
/// Non-trainable entries keep zero moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.params().iter().map(|p| p.value.zeros_like()).collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check(&self, params: &ParamSet<T>) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match the parameter set"));
        }
        for ((p, m), v) in params.params().iter().zip(&self.m).zip(&self.v) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::shape("optimizer moments", m.shape(), p.value.shape()));
            }
        }
        Ok(())
    }
}

/// One Adam update. `grads` pairs parameter indices with their gradients;
/// parameters without a gradient are left alone. All gradients are checked
/// before anything is written.
pub fn adam_step<T: Float>(params: &mut ParamSet<T>, grads: &[(usize, Tensor<T>)], state: &mut OptimizerState<T>) -> Result<()> {
    state.check(params)?;
    for (i, g) in grads {
        let p = params.params().get(*i).ok_or_else(|| Error::invalid("gradient for unknown parameter"))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape("adam_step", g.shape(), p.value.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    for (i, g) in grads {
        let (m, v) = (&mut state.m[*i], &mut state.v[*i]);
        let theta = &mut params.params_mut()[*i].value;
        for (((th, mj), vj), gj) in theta.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            let g = gj.to_f64();
            let mn = beta1 * mj.to_f64() + (1.0 - beta1) * g;
            let vn = beta2 * vj.to_f64() + (1.0 - beta2) * g * g;
            *mj = T::from_f64(mn);
            *vj = T::from_f64(vn);
            *th = T::from_f64(th.to_f64() - lr * (mn / c1) / (libm::sqrt(vn / c2) + eps));
        }
    }
    Ok(())
}
