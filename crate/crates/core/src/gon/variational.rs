use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Decoder, LatentBatch};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{DecoderSpec, Mode, ParamSet, ParamSource};
use crate::scalar::Float;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observation model `p(x | z)` on the decoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Output is read as logits of independent Bernoulli pixels.
    #[default]
    Bernoulli,
    /// Unit-variance Gaussian centred on the output.
    Gaussian,
}

impl Likelihood {
    /// `log p(x | out)` summed over every element of the batch.
    pub fn log_prob_sum<'g, T: Float>(self, x: Var<'g, T>, out: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            Likelihood::Bernoulli => x.mul(out)?.sub(out.softplus()?)?.sum(),
            Likelihood::Gaussian => {
                let n = x.numel() as f64;
                x.sub(out)?.square()?.sum()?.scale(-0.5)?.add_scalar(-0.5 * n * LN_2PI)
            }
        }
    }

    pub fn reconstruction<'g, T: Float>(self, out: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            Likelihood::Bernoulli => out.sigmoid(),
            Likelihood::Gaussian => Ok(out),
        }
    }
}

/// `0.5·Σ(μ² + σ² − 1 − log σ²)` summed over the whole batch.
pub fn kl_sum<'g, T: Float>(mu: Var<'g, T>, logvar: Var<'g, T>) -> Result<Var<'g, T>> {
    mu.square()?.add(logvar.exp()?)?.sub(logvar)?.add_scalar(-1.0)?.sum()?.scale(0.5)
}

pub struct VgonOutput<'g, T: Float> {
    /// `−ELBO` averaged over the batch.
    pub loss: Var<'g, T>,
    /// Batch means, in nats per example.
    pub elbo: Var<'g, T>,
    pub kl: Var<'g, T>,
    pub recon_ll: Var<'g, T>,
    /// `ẑ`, the input of the network before the stochastic layer.
    pub latent: Var<'g, T>,
    pub mu: Var<'g, T>,
    pub logvar: Var<'g, T>,
    pub recon: Var<'g, T>,
    pub bn_updates: Vec<(String, Tensor<T>)>,
}

/// Variational GON objective. `ẑ = z₀ + ∇_{z₀}[log p(x|z₀) + log N(z₀; 0, vI)]`
/// at `z₀ = 0`, then `ẑ → (μ, σ) → z′ = μ + σ⊙ε → x̂`. The decoder's
/// `noise` is used for both passes.
pub fn vgon_loss<'g, T: Float, P: ParamSource<'g, T>>(
    dec: &Decoder<'_, 'g, T, P>,
    x: Var<'g, T>,
    prior_var: f64,
    likelihood: Likelihood,
) -> Result<VgonOutput<'g, T>> {
    if dec.spec.reparameterize_index().is_none() {
        return Err(Error::invalid("variational GON needs a reparameterize layer"));
    }
    if !(prior_var.is_finite() && prior_var > 0.0) {
        return Err(Error::invalid("prior variance must be positive"));
    }
    let g = x.graph();
    let batch = x.shape()[0];
    let mut zshape = alloc::vec![batch];
    zshape.extend_from_slice(&dec.spec.latent_shape);
    let z0 = g.zeros(&zshape);
    let (out0, _) = dec.run(z0)?;
    let log_prior = z0.square()?.sum()?.scale(-0.5 / prior_var)?;
    let objective = likelihood.log_prob_sum(x, out0)?.add(log_prior)?;
    let score = g.grad(objective, &[z0], true)?.get(0);
    let zhat = z0.add(score)?;
    let (out, ctx) = dec.run(zhat)?;
    let (mu, logvar) = ctx.heads.ok_or_else(|| Error::invalid("reparameterize layer produced no heads"))?;
    let inv_b = 1.0 / batch as f64;
    let recon_ll = likelihood.log_prob_sum(x, out)?.scale(inv_b)?;
    let kl = kl_sum(mu, logvar)?.scale(inv_b)?;
    let elbo = recon_ll.sub(kl)?;
    Ok(VgonOutput {
        loss: elbo.neg()?,
        elbo,
        kl,
        recon_ll,
        latent: zhat,
        mu,
        logvar,
        recon: likelihood.reconstruction(out)?,
        bn_updates: ctx.bn_updates,
    })
}

/// Batch-mean `(elbo, kl, recon_ll)` and `ẑ` under a frozen decoder
/// (parameters `decoder.*`, eval mode) with noise `eps`.
pub fn variational_gon_elbo<T: Float>(
    x: &Tensor<T>,
    spec: &DecoderSpec,
    params: &ParamSet<T>,
    eps: &Tensor<T>,
    prior_var: f64,
    likelihood: Likelihood,
) -> Result<(T, T, T, LatentBatch<T>)> {
    let g = Graph::new();
    let b = params.bind(&g);
    let scope = b.scope("decoder");
    let mut dec = Decoder::new(spec, &scope, Mode::Eval);
    dec.noise = Some(g.leaf(eps.clone()));
    let out = vgon_loss(&dec, g.leaf(x.clone()), prior_var, likelihood)?;
    Ok((
        out.elbo.value().item()?,
        out.kl.value().item()?,
        out.recon_ll.value().item()?,
        LatentBatch {
            z: out.latent.tensor(),
            origin_sigma: 0.0,
        },
    ))
}
