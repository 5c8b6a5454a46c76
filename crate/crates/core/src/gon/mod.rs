//! Gradient origin networks.
//!
//! A latent is read off as the negative gradient of the inner reconstruction
//! loss at the origin, `z = −∇_{z₀} L(x, F(z₀))`, and the decoder is trained
//! on the outer loss `L(x, F(z))` with gradients flowing back through that
//! first derivative.

mod baselines;
mod bayes;
mod classifier;
mod implicit;
mod latent;
mod variational;

pub use baselines::{ae_loss, tied_encoder_params, tied_weight_map, GloTable, TiedEncoder};
pub use bayes::{empirical_bayes_estimate, EmpiricalBayesSetting, PriorKind};
pub use classifier::{classifier_gon_loss, classifier_head_spec, classifier_loss, cross_entropy, ClassifierOutput};
pub use implicit::{implicit_gon_loss, implicit_loss, super_resolve, ImplicitOutput};
pub use latent::{fit_latent_gaussian, sample_latents, slerp, LatentGaussian};
pub use variational::{kl_sum, variational_gon_elbo, vgon_loss, Likelihood, VgonOutput};

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{forward, DecoderSpec, ForwardCtx, Mode, ParamSet, ParamSource};
use crate::scalar::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerLoss {
    /// Squared error against the raw output.
    #[default]
    Mse,
    /// Bernoulli negative log-likelihood; the output is read as logits.
    BernoulliNll,
}

impl InnerLoss {
    /// Sum over the batch of each example's mean loss, so the gradient with
    /// respect to one example's latent involves only that example.
    pub fn batch_sum<'g, T: Float>(self, x: Var<'g, T>, out: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        let m = shape[1..].iter().product::<usize>().max(1) as f64;
        let per_elem = match self {
            InnerLoss::Mse => out.sub(x)?.square()?,
            InnerLoss::BernoulliNll => out.softplus()?.sub(out.mul(x)?)?,
        };
        per_elem.sum()?.scale(1.0 / m)
    }

    /// Maps raw network output to data space.
    pub fn reconstruction<'g, T: Float>(self, out: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            InnerLoss::Mse => Ok(out),
            InnerLoss::BernoulliNll => out.sigmoid(),
        }
    }
}

/// How the latent is inferred from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceVariant {
    pub steps: usize,
    pub step_size: f64,
    /// Cut θ-gradients through the inference steps.
    pub detach: bool,
}

impl Default for InferenceVariant {
    fn default() -> Self {
        Self::canonical()
    }
}

impl InferenceVariant {
    pub const MULTI_STEP_SIZE: f64 = 0.1;

    /// One bare gradient step, differentiated through.
    pub fn canonical() -> Self {
        InferenceVariant {
            steps: 1,
            step_size: 1.0,
            detach: false,
        }
    }

    pub fn single_detached() -> Self {
        InferenceVariant {
            detach: true,
            ..Self::canonical()
        }
    }

    /// `steps` descent steps of size 0.1.
    pub fn multi(steps: usize, detach: bool) -> Self {
        InferenceVariant {
            steps,
            step_size: Self::MULTI_STEP_SIZE,
            detach,
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.steps == 1 && !self.detach
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("inference needs at least one step"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("inference step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GonConfig {
    pub inner_loss: InnerLoss,
    pub variant: InferenceVariant,
    /// Standard deviation of `z₀`; 0 places it exactly at the origin.
    pub origin_sigma: f64,
    /// Use `z = z₀ − ∇` rather than `z = −∇` for the first step.
    pub descent_form: bool,
}

impl Default for GonConfig {
    fn default() -> Self {
        GonConfig {
            inner_loss: InnerLoss::Mse,
            variant: InferenceVariant::canonical(),
            origin_sigma: 0.0,
            descent_form: false,
        }
    }
}

impl GonConfig {
    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        if !(self.origin_sigma.is_finite() && self.origin_sigma >= 0.0) {
            return Err(Error::invalid("origin_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Latent codes of one batch, shape `(B, …latent_shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    pub z: Tensor<T>,
    pub origin_sigma: f64,
}

/// Starting points `z₀ ~ N(0, σ²I)`; exactly zero when `σ = 0` (no draws
/// are taken from `rng` then).
pub fn origin<T: Float>(batch: usize, latent_shape: &[usize], sigma: f64, rng: &mut impl Rng) -> Tensor<T> {
    let mut shape = alloc::vec![batch];
    shape.extend_from_slice(latent_shape);
    if sigma == 0.0 {
        return Tensor::zeros(&shape);
    }
    Tensor::from_fn(&shape, |_| T::from_f64(sigma * rng.sample::<f64, _>(StandardNormal)))
}

/// A network on a graph together with everything a pass needs.
pub struct Decoder<'a, 'g, T: Float, P: ParamSource<'g, T>> {
    pub spec: &'a DecoderSpec,
    pub params: &'a P,
    pub mode: Mode,
    /// Shared coordinates `(P, n)` for coordinate networks.
    pub coords: Option<Var<'g, T>>,
    /// Reparameterization noise `(B, latent)`.
    pub noise: Option<Var<'g, T>>,
}

impl<'a, 'g, T: Float, P: ParamSource<'g, T>> Decoder<'a, 'g, T, P> {
    pub fn new(spec: &'a DecoderSpec, params: &'a P, mode: Mode) -> Self {
        Decoder {
            spec,
            params,
            mode,
            coords: None,
            noise: None,
        }
    }

    /// Network input for latents `z`: `z` itself, or `c ⊕ z` at every
    /// coordinate.
    pub fn input(&self, z: Var<'g, T>) -> Result<Var<'g, T>> {
        match (self.spec.is_implicit(), self.coords) {
            (false, _) => Ok(z),
            (true, None) => Err(Error::invalid("coordinate network evaluated without coordinates")),
            (true, Some(c)) => {
                let zs = z.shape();
                let cs = c.shape();
                if zs.len() != 2 || cs.len() != 2 || cs[1] != self.spec.coord_dim {
                    return Err(Error::shape("coordinate input", &zs, &cs));
                }
                let (b, k, p, n) = (zs[0], zs[1], cs[0], cs[1]);
                let zb = z.reshape(&[b, 1, k])?.broadcast_to(&[b, p, k])?;
                let cb = c.reshape(&[1, p, n])?.broadcast_to(&[b, p, n])?;
                z.graph().concat(&[cb, zb], 2)
            }
        }
    }

    /// `F(z)` and the pass context.
    pub fn run(&self, z: Var<'g, T>) -> Result<(Var<'g, T>, ForwardCtx<'g, T>)> {
        let mut ctx = ForwardCtx::new(self.mode);
        ctx.noise = self.noise;
        let out = forward(self.spec, self.params, self.input(z)?, &mut ctx)?;
        Ok((out, ctx))
    }
}

/// Infers latents for targets `x` starting from `z0`.
pub fn encode_latent<'g, T: Float, P: ParamSource<'g, T>>(dec: &Decoder<'_, 'g, T, P>, x: Var<'g, T>, z0: Var<'g, T>, cfg: &GonConfig) -> Result<Var<'g, T>> {
    cfg.validate()?;
    let g = x.graph();
    let v = cfg.variant;
    let mut z = z0;
    for t in 0..v.steps {
        let (out, _) = dec.run(z)?;
        let loss = cfg.inner_loss.batch_sum(x, out)?;
        let grad = g.grad(loss, &[z], !v.detach)?.get(0);
        let step = grad.scale(v.step_size)?;
        z = if t == 0 && !cfg.descent_form { step.neg()? } else { z.sub(step)? };
        if v.detach {
            z = z.detach();
        }
    }
    Ok(z)
}

pub struct GonOutput<'g, T: Float> {
    /// Batch mean of the per-example outer loss.
    pub loss: Var<'g, T>,
    pub latent: Var<'g, T>,
    /// Data-space reconstruction.
    pub recon: Var<'g, T>,
    pub bn_updates: Vec<(String, Tensor<T>)>,
}

/// Outer loss `L(x, F(z))` with `z` inferred from `z0`.
pub fn gon_loss<'g, T: Float, P: ParamSource<'g, T>>(dec: &Decoder<'_, 'g, T, P>, x: Var<'g, T>, z0: Var<'g, T>, cfg: &GonConfig) -> Result<GonOutput<'g, T>> {
    let z = encode_latent(dec, x, z0, cfg)?;
    let (out, ctx) = dec.run(z)?;
    let batch = x.shape()[0] as f64;
    let loss = cfg.inner_loss.batch_sum(x, out)?.scale(1.0 / batch)?;
    Ok(GonOutput {
        loss,
        latent: z,
        recon: cfg.inner_loss.reconstruction(out)?,
        bn_updates: ctx.bn_updates,
    })
}

fn check_batch<T: Float>(x: &Tensor<T>, spec: &DecoderSpec) -> Result<()> {
    if x.rank() == 0 || x.shape()[1..] != spec.output_shape[..] {
        return Err(Error::shape("data batch", x.shape(), &spec.output_shape));
    }
    Ok(())
}

/// Latents for the batch `x` under a frozen decoder whose parameters are
/// named `decoder.*`, evaluated in eval mode from `z0`.
pub fn gon_encode<T: Float>(x: &Tensor<T>, spec: &DecoderSpec, params: &ParamSet<T>, z0: &Tensor<T>, cfg: &GonConfig) -> Result<LatentBatch<T>> {
    check_batch(x, spec)?;
    let g = Graph::new();
    let b = params.bind(&g);
    let scope = b.scope("decoder");
    let dec = Decoder::new(spec, &scope, Mode::Eval);
    let z = encode_latent(&dec, g.leaf(x.clone()), g.leaf(z0.clone()), cfg)?;
    Ok(LatentBatch {
        z: z.tensor(),
        origin_sigma: cfg.origin_sigma,
    })
}

/// Outer loss, latents and reconstruction for a frozen decoder.
pub fn gon_autoencode_loss<T: Float>(
    x: &Tensor<T>,
    spec: &DecoderSpec,
    params: &ParamSet<T>,
    z0: &Tensor<T>,
    cfg: &GonConfig,
) -> Result<(T, LatentBatch<T>, Tensor<T>)> {
    check_batch(x, spec)?;
    let g = Graph::new();
    let b = params.bind(&g);
    let scope = b.scope("decoder");
    let dec = Decoder::new(spec, &scope, Mode::Eval);
    let out = gon_loss(&dec, g.leaf(x.clone()), g.leaf(z0.clone()), cfg)?;
    Ok((
        out.loss.value().item()?,
        LatentBatch {
            z: out.latent.tensor(),
            origin_sigma: cfg.origin_sigma,
        },
        out.recon.tensor(),
    ))
}
