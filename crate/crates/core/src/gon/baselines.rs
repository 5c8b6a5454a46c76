//! Autoencoder, tied-weight autoencoder and GLO baselines.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Decoder, GonOutput, InnerLoss};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, DecoderSpec, InitScheme, LayerSpec, ParamSet, ParamSource};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Reconstruction through an explicit encoder: `L(x, F(E(x)))`.
pub fn ae_loss<'g, T: Float, E: ParamSource<'g, T>, P: ParamSource<'g, T>>(
    enc: &Decoder<'_, 'g, T, E>,
    dec: &Decoder<'_, 'g, T, P>,
    x: Var<'g, T>,
    inner_loss: InnerLoss,
) -> Result<GonOutput<'g, T>> {
    let (z, ctx_e) = enc.run(x)?;
    let (out, ctx_d) = dec.run(z)?;
    let loss = inner_loss.batch_sum(x, out)?.scale(1.0 / x.shape()[0] as f64)?;
    let mut bn_updates = ctx_e.bn_updates;
    bn_updates.extend(ctx_d.bn_updates);
    Ok(GonOutput {
        loss,
        latent: z,
        recon: inner_loss.reconstruction(out)?,
        bn_updates,
    })
}

/// Mirrored encoder of `decoder` and, per encoder layer, the decoder layer
/// whose weight it reuses transposed. Only dense and transposed-conv
/// decoders have exact transposes.
pub fn tied_weight_map(decoder: &DecoderSpec) -> Result<(DecoderSpec, Vec<Option<usize>>)> {
    if decoder.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Upsample { .. })) {
        return Err(Error::invalid("tied weights need a decoder of dense and conv_transpose layers"));
    }
    let enc = decoder.mirror()?;
    let dec_weighted: Vec<usize> = decoder
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. } | LayerSpec::ConvTranspose { .. }))
        .map(|(i, _)| i)
        .collect();
    let mut next = dec_weighted.into_iter().rev();
    let map = enc
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } => next.next(),
            _ => None,
        })
        .collect();
    Ok((enc, map))
}

/// Encoder parameters of a tied autoencoder: biases and normalization only,
/// named `encoder.*`.
pub fn tied_encoder_params<T: Float>(decoder: &DecoderSpec, seed: u64) -> Result<ParamSet<T>> {
    let (enc, map) = tied_weight_map(decoder)?;
    let mut p = ParamSet::init(&enc, "encoder", InitScheme::FanIn, seed)?;
    let shared: Vec<String> = map
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_some())
        .map(|(i, _)| format!("encoder.{i}.weight"))
        .collect();
    p.retain(|q| !shared.contains(&q.name));
    Ok(p)
}

/// Resolves encoder parameters, substituting transposed decoder weights.
pub struct TiedEncoder<'s, 'a, 'g, T: Float> {
    pub bound: &'s Bound<'a, 'g, T>,
    pub encoder: &'s DecoderSpec,
    pub map: &'s [Option<usize>],
}

impl<'g, T: Float> ParamSource<'g, T> for TiedEncoder<'_, '_, 'g, T> {
    fn param(&self, layer: usize, name: &str) -> Result<Var<'g, T>> {
        match (name, self.map.get(layer).copied().flatten()) {
            ("weight", Some(j)) => {
                let w = self.bound.get(&format!("decoder.{j}.weight"))?;
                match self.encoder.layers[layer] {
                    // (in, out) decoder matrix read as (out, in)
                    LayerSpec::Dense { .. } => w.transpose(),
                    // conv_transpose filters (C_in, C_out, k, k) are the
                    // adjoint conv's (F, C, k, k) as stored
                    _ => Ok(w),
                }
            }
            _ => self.bound.get(&self.param_name(layer, name)),
        }
    }

    fn param_name(&self, layer: usize, name: &str) -> String {
        format!("encoder.{layer}.{name}")
    }
}

/// Per-example latent codes optimized jointly with the decoder by Adam,
/// row by row. Rows are not projected onto a sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GloTable<T> {
    /// `(N, …latent_shape)`.
    pub latents: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Adam step count of each row.
    pub steps: Vec<u64>,
}

impl<T: Float> GloTable<T> {
    /// Rows drawn from `N(0, init_sigma²)`.
    pub fn new(n: usize, latent_shape: &[usize], init_sigma: f64, seed: u64) -> Self {
        let mut shape = alloc::vec![n];
        shape.extend_from_slice(latent_shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latents = Tensor::from_fn(&shape, |_| T::from_f64(init_sigma * rng.sample::<f64, _>(StandardNormal)));
        GloTable {
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            latents,
            steps: alloc::vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(Error::UnknownExample(id));
        }
        Ok(())
    }

    pub fn latent(&self, id: usize) -> Result<Tensor<T>> {
        self.check(id)?;
        self.latents.index_first(id)
    }

    pub fn gather(&self, ids: &[usize]) -> Result<Tensor<T>> {
        ids.iter().try_for_each(|&i| self.check(i))?;
        self.latents.select_first(ids)
    }

    /// One Adam step on the rows `ids` with gradients `grads` (`(B, …)`).
    pub fn update(&mut self, ids: &[usize], grads: &Tensor<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        ids.iter().try_for_each(|&i| self.check(i))?;
        let row = self.latents.numel() / self.len().max(1);
        if grads.numel() != ids.len() * row {
            return Err(Error::shape("glo update", grads.shape(), self.latents.shape()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("GLO latent gradient".into()));
        }
        for (k, &id) in ids.iter().enumerate() {
            self.steps[id] += 1;
            let t = self.steps[id] as i32;
            let c1 = 1.0 - libm::pow(beta1, t as f64);
            let c2 = 1.0 - libm::pow(beta2, t as f64);
            for j in 0..row {
                let g = grads.data()[k * row + j].to_f64();
                let idx = id * row + j;
                let m = beta1 * self.m.data()[idx].to_f64() + (1.0 - beta1) * g;
                let v = beta2 * self.v.data()[idx].to_f64() + (1.0 - beta2) * g * g;
                self.m.data_mut()[idx] = T::from_f64(m);
                self.v.data_mut()[idx] = T::from_f64(v);
                let step = lr * (m / c1) / (libm::sqrt(v / c2) + eps);
                let z = self.latents.data()[idx].to_f64() - step;
                self.latents.data_mut()[idx] = T::from_f64(z);
            }
        }
        Ok(())
    }
}
