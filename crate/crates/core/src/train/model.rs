use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::autodiff::Graph;
use crate::data::{coord_grid, images_to_signals, signals_to_images};
use crate::error::{Error, Result};
use crate::gon::{
    classifier_head_spec, encode_latent, super_resolve, tied_encoder_params, tied_weight_map, Decoder, GonConfig, InferenceVariant, InnerLoss, Likelihood,
    TiedEncoder,
};
use crate::nn::{forward_from, siren_init, DecoderSpec, ForwardCtx, InitScheme, LayerSpec, Mode, ParamSet};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Which objective a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gon,
    Vgon,
    Implicit,
    Classifier,
    Ae,
    TiedAe,
    Glo,
    /// GON with `steps` inference steps; a single step has size 1, longer
    /// chains use steps of 0.1.
    NStep {
        steps: usize,
        detach: bool,
    },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Gon => "gon",
            Variant::Vgon => "vgon",
            Variant::Implicit => "implicit",
            Variant::Classifier => "classifier",
            Variant::Ae => "ae",
            Variant::TiedAe => "tied_ae",
            Variant::Glo => "glo",
            Variant::NStep { .. } => "n_step",
        }
    }

    /// Latent inference used by gradient-origin variants.
    pub fn inference(&self) -> InferenceVariant {
        match *self {
            Variant::NStep { steps: 1, detach } => InferenceVariant {
                detach,
                ..InferenceVariant::canonical()
            },
            Variant::NStep { steps, detach } => InferenceVariant::multi(steps, detach),
            _ => InferenceVariant::canonical(),
        }
    }

    /// Latents come from a gradient at the origin.
    pub fn is_gradient_origin(&self) -> bool {
        matches!(self, Variant::Gon | Variant::Implicit | Variant::Classifier | Variant::NStep { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    FanIn,
    Siren,
}

fn default_prior_var() -> f64 {
    2.0
}

fn default_glo_sigma() -> f64 {
    0.01
}

fn default_glo_val_steps() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub decoder: DecoderSpec,
    #[serde(default)]
    pub init: InitKind,
    /// Inner and outer reconstruction loss of deterministic variants.
    #[serde(default)]
    pub inner_loss: InnerLoss,
    #[serde(default)]
    pub likelihood: Likelihood,
    /// Variance of the Gaussian prior on `z₀` for the variational variant.
    #[serde(default = "default_prior_var")]
    pub prior_var: f64,
    #[serde(default)]
    pub descent_form: bool,
    /// Number of classes of the classifier head.
    #[serde(default)]
    pub classes: usize,
    #[serde(default = "default_glo_sigma")]
    pub glo_init_sigma: f64,
    /// Adam steps fitting latents of unseen examples under a GLO decoder.
    #[serde(default = "default_glo_val_steps")]
    pub glo_val_steps: usize,
}

impl ModelConfig {
    pub fn new(decoder: DecoderSpec) -> Self {
        ModelConfig {
            decoder,
            init: InitKind::FanIn,
            inner_loss: InnerLoss::Mse,
            likelihood: Likelihood::Bernoulli,
            prior_var: default_prior_var(),
            descent_form: false,
            classes: 0,
            glo_init_sigma: default_glo_sigma(),
            glo_val_steps: default_glo_val_steps(),
        }
    }

    /// Maps raw decoder output to data space.
    pub fn to_data<T: Float>(&self, variant: Variant, out: &Tensor<T>) -> Tensor<T> {
        let logits = match variant {
            Variant::Vgon => self.likelihood == Likelihood::Bernoulli,
            _ => self.inner_loss == InnerLoss::BernoulliNll,
        };
        if logits {
            out.map(|v| T::ONE / (T::ONE + (-v).exp()))
        } else {
            out.clone()
        }
    }
}

/// Network specs and parameters of one run. Decoder parameters are named
/// `decoder.*`, encoder ones `encoder.*` and the classifier head `head.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParamSet<T>,
    pub encoder: Option<DecoderSpec>,
    /// Decoder layer whose weight each encoder layer reuses.
    pub tied_map: Option<Vec<Option<usize>>>,
    pub head: Option<DecoderSpec>,
    /// `(C, H, W)` of the data.
    pub image_shape: Vec<usize>,
}

impl<T: Float> Model<T> {
    pub fn new(config: ModelConfig, variant: Variant, image_shape: &[usize], seed: u64) -> Result<Self> {
        let spec = &config.decoder;
        spec.validate()?;
        if image_shape.len() != 3 {
            return Err(Error::invalid("image shape must be (C, H, W)"));
        }
        let pixels: usize = image_shape.iter().product();
        if spec.is_implicit() {
            if variant != Variant::Implicit || spec.coord_dim != 2 || spec.output_shape != [image_shape[0]] {
                return Err(Error::invalid(
                    "coordinate decoders need the implicit variant, 2-D coordinates and one output per channel",
                ));
            }
        } else if variant == Variant::Implicit {
            return Err(Error::invalid("the implicit variant needs a coordinate decoder"));
        } else if spec.output_shape.iter().product::<usize>() != pixels {
            return Err(Error::shape("decoder output vs images", &spec.output_shape, image_shape));
        }
        if (variant == Variant::Vgon) != spec.reparameterize_index().is_some() {
            return Err(Error::invalid("a reparameterize layer is required by, and only by, the variational variant"));
        }
        if variant == Variant::Classifier && config.classes < 2 {
            return Err(Error::invalid("classifier needs model.classes >= 2"));
        }
        variant.inference().validate()?;
        let mut params = match config.init {
            InitKind::FanIn => ParamSet::init(spec, "decoder", InitScheme::FanIn, seed)?,
            InitKind::Siren => siren_init(spec, spec.w0, seed)?,
        };
        let (mut encoder, mut tied_map, mut head) = (None, None, None);
        match variant {
            Variant::Ae => {
                let enc = spec.mirror()?;
                params.add_network(&enc, "encoder", InitScheme::FanIn, seed.wrapping_add(1))?;
                encoder = Some(enc);
            }
            Variant::TiedAe => {
                let (enc, map) = tied_weight_map(spec)?;
                params.merge(tied_encoder_params(spec, seed.wrapping_add(1))?)?;
                encoder = Some(enc);
                tied_map = Some(map);
            }
            Variant::Classifier => {
                let h = classifier_head_spec(spec.latent_dim(), config.classes);
                params.add_network(&h, "head", InitScheme::FanIn, seed.wrapping_add(2))?;
                head = Some(h);
            }
            _ => {}
        }
        Ok(Model {
            config,
            variant,
            params,
            encoder,
            tied_map,
            head,
            image_shape: image_shape.to_vec(),
        })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.config.decoder
    }

    pub fn gon_config(&self, origin_sigma: f64) -> GonConfig {
        GonConfig {
            inner_loss: self.config.inner_loss,
            variant: self.variant.inference(),
            origin_sigma,
            descent_form: self.config.descent_form,
        }
    }

    /// Shape of one latent code.
    pub fn latent_shape(&self) -> &[usize] {
        &self.spec().latent_shape
    }

    /// Width of the stochastic layer, if any.
    pub fn noise_dim(&self) -> Option<usize> {
        self.spec().layers.iter().find_map(|l| match l {
            LayerSpec::Reparameterize { latent } => Some(*latent),
            _ => None,
        })
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        if images.rank() != 4 || images.shape()[1..] != self.image_shape[..] {
            return Err(Error::shape("images", images.shape(), &self.image_shape));
        }
        Ok(())
    }

    /// Images `(B, C, H, W)` laid out as decoder targets.
    pub fn targets(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        if self.spec().is_implicit() {
            return images_to_signals(images);
        }
        let mut shape = vec![images.shape()[0]];
        shape.extend_from_slice(&self.spec().output_shape);
        images.reshape(&shape)
    }

    /// Inverse of [`targets`](Self::targets).
    pub fn images(&self, targets: &Tensor<T>) -> Result<Tensor<T>> {
        let b = targets.shape().first().copied().unwrap_or(0);
        if self.spec().is_implicit() {
            return signals_to_images(targets, self.image_shape[1], self.image_shape[2]);
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.image_shape);
        targets.reshape(&shape)
    }

    pub fn coords(&self) -> Result<Option<Tensor<T>>> {
        if !self.spec().is_implicit() {
            return Ok(None);
        }
        Ok(Some(coord_grid::<T>(self.image_shape[1], self.image_shape[2])?.coords))
    }

    fn origin_batch(&self, b: usize) -> Tensor<T> {
        let mut shape = vec![b];
        shape.extend_from_slice(self.latent_shape());
        Tensor::zeros(&shape)
    }

    /// Latents of `images` in eval mode. Gradient-origin variants start at
    /// the origin; GLO fits fresh latents to the frozen decoder; the
    /// variational variant returns the mean code `μ`, which
    /// [`decode`](Self::decode) accepts.
    pub fn encode(&self, images: &Tensor<T>, optimizer: &AdamConfig, seed: u64) -> Result<Tensor<T>> {
        let x = self.targets(images)?;
        let b = x.shape()[0];
        match self.variant {
            Variant::Glo => self.fit_latents(&x, optimizer, seed),
            Variant::Vgon => {
                let (_, z, _) = self.vgon_pass(&x, &Tensor::zeros(&[b, self.noise_dim().unwrap_or(0)]))?;
                Ok(z)
            }
            Variant::Ae | Variant::TiedAe => {
                let g = Graph::new();
                let bound = self.params.bind(&g);
                let enc_spec = self.encoder.as_ref().ok_or_else(|| Error::invalid("autoencoder without encoder"))?;
                let x = g.leaf(x);
                let z = if let Some(map) = &self.tied_map {
                    let tied = TiedEncoder {
                        bound: &bound,
                        encoder: enc_spec,
                        map,
                    };
                    Decoder::new(enc_spec, &tied, Mode::Eval).run(x)?.0
                } else {
                    let scope = bound.scope("encoder");
                    Decoder::new(enc_spec, &scope, Mode::Eval).run(x)?.0
                };
                Ok(z.tensor())
            }
            _ => {
                let g = Graph::new();
                let bound = self.params.bind(&g);
                let scope = bound.scope("decoder");
                let mut dec = Decoder::new(self.spec(), &scope, Mode::Eval);
                if let Some(c) = self.coords()? {
                    dec.coords = Some(g.leaf(c));
                }
                let z = encode_latent(&dec, g.leaf(x), g.leaf(self.origin_batch(b)), &self.gon_config(0.0))?;
                Ok(z.tensor())
            }
        }
    }

    /// `(recon_ll, μ, data-space output)` of the variational network with
    /// noise `eps`.
    fn vgon_pass(&self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<(f64, Tensor<T>, Tensor<T>)> {
        let s = self.vgon_stats(x, eps)?;
        Ok((s.0, s.2, s.3))
    }

    /// Batch means `(recon_ll, kl)`, the mean code `μ` and the data-space
    /// output.
    pub fn vgon_stats(&self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<(f64, f64, Tensor<T>, Tensor<T>)> {
        let g = Graph::new();
        let bound = self.params.bind(&g);
        let scope = bound.scope("decoder");
        let mut dec = Decoder::new(self.spec(), &scope, Mode::Eval);
        dec.noise = Some(g.leaf(eps.clone()));
        let out = crate::gon::vgon_loss(&dec, g.leaf(x.clone()), self.config.prior_var, self.config.likelihood)?;
        Ok((
            out.recon_ll.value().item()?.to_f64(),
            out.kl.value().item()?.to_f64(),
            out.mu.tensor(),
            out.recon.tensor(),
        ))
    }

    /// Adam on per-example latents of a frozen decoder, starting from
    /// `N(0, glo_init_sigma²)`.
    fn fit_latents(&self, x: &Tensor<T>, optimizer: &AdamConfig, seed: u64) -> Result<Tensor<T>> {
        let b = x.shape()[0];
        let mut table = crate::gon::GloTable::new(b, self.latent_shape(), self.config.glo_init_sigma, seed);
        let ids: Vec<usize> = (0..b).collect();
        for _ in 0..self.config.glo_val_steps {
            let g = Graph::new();
            let bound = self.params.bind(&g);
            let scope = bound.scope("decoder");
            let dec = Decoder::new(self.spec(), &scope, Mode::Eval);
            let z = g.leaf(table.latents.clone());
            let (out, _) = dec.run(z)?;
            let loss = self.config.inner_loss.batch_sum(g.leaf(x.clone()), out)?;
            let grad = g.grad(loss, &[z], false)?.get(0).tensor();
            table.update(&ids, &grad, optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps)?;
        }
        Ok(table.latents)
    }

    /// Data-space images decoded from latents `z` (the network input for
    /// deterministic variants, the post-noise code for the variational one).
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let spec = self.spec();
        if spec.is_implicit() {
            let out = super_resolve(spec, &self.params, z, self.image_shape[1], self.image_shape[2])?;
            return Ok(self.config.to_data(self.variant, &out));
        }
        let g = Graph::new();
        let bound = self.params.bind(&g);
        let scope = bound.scope("decoder");
        let start = spec.reparameterize_index().map_or(0, |i| i + 1);
        let mut ctx = ForwardCtx::new(Mode::Eval);
        let out = g.no_grad(|| forward_from(spec, &scope, start, g.leaf(z.clone()), &mut ctx))?;
        self.images(&self.config.to_data(self.variant, &out.tensor()))
    }

    /// Eval-mode reconstructions of `images`; the variational variant uses
    /// the mean code (`ε = 0`).
    pub fn reconstruct(&self, images: &Tensor<T>, optimizer: &AdamConfig, seed: u64) -> Result<Tensor<T>> {
        if self.variant == Variant::Vgon {
            let x = self.targets(images)?;
            let b = x.shape()[0];
            let (_, _, out) = self.vgon_pass(&x, &Tensor::zeros(&[b, self.noise_dim().unwrap_or(0)]))?;
            return self.images(&out);
        }
        let z = self.encode(images, optimizer, seed)?;
        if self.spec().is_implicit() {
            return self.decode(&z);
        }
        let g = Graph::new();
        let bound = self.params.bind(&g);
        let scope = bound.scope("decoder");
        let dec = Decoder::new(self.spec(), &scope, Mode::Eval);
        let (out, _) = g.no_grad(|| dec.run(g.leaf(z)))?;
        self.images(&self.config.to_data(self.variant, &out.tensor()))
    }

    /// Images decoded from `count` draws of `N(0, I)`: the prior of the
    /// variational variant.
    pub fn sample_prior(&self, count: usize, seed: u64) -> Result<Tensor<T>> {
        let k = self.noise_dim().ok_or_else(|| Error::invalid("prior sampling needs the variational variant"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(&[count, k], |_| T::from_f64(rng.sample::<f64, _>(StandardNormal)));
        self.decode(&z)
    }
}
