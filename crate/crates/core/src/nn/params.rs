use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::ActivationKind;
use super::spec::{DecoderSpec, LayerSpec};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Running statistics are stored here but never optimized.
    pub trainable: bool,
}

/// Named tensors of one model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    seed: u64,
    params: Vec<Param<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights and biases `U(±1/√fan_in)`.
    FanIn,
    /// First weighted layer `U(±1/fan_in)`, later ones `U(±√(6/fan_in)/w0)`;
    /// biases `U(±1/√fan_in)`.
    Siren,
}

fn fan_in(layer: &LayerSpec, input: &[usize]) -> usize {
    match *layer {
        LayerSpec::Dense { input, .. } => input,
        LayerSpec::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
        LayerSpec::ConvTranspose { out_channels, kernel, .. } => out_channels * kernel * kernel,
        LayerSpec::Reparameterize { .. } => input[0],
        _ => 0,
    }
}

fn uniform<T: Float>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64((2.0 * rng.random::<f64>() - 1.0) * bound))
}

impl<T: Float> ParamSet<T> {
    pub fn new(seed: u64) -> Self {
        ParamSet { seed, params: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh parameters for `spec`, named `{prefix}.{layer}.{param}`.
    pub fn init(spec: &DecoderSpec, prefix: &str, scheme: InitScheme, seed: u64) -> Result<Self> {
        let mut set = ParamSet::new(seed);
        set.add_network(spec, prefix, scheme, seed)?;
        Ok(set)
    }

    /// Appends parameters for another network drawn from its own stream.
    pub fn add_network(&mut self, spec: &DecoderSpec, prefix: &str, scheme: InitScheme, seed: u64) -> Result<()> {
        let shapes = spec.validate()?;
        if scheme == InitScheme::Siren {
            if let Some(l) = spec
                .layers
                .iter()
                .find(|l| matches!(l, LayerSpec::Activation { kind } if *kind != ActivationKind::Sin))
            {
                return Err(Error::invalid(format!("SIREN initialization needs sin activations, found {}", l.name())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = true;
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = if i == 0 { spec.input_shape() } else { shapes[i - 1].clone() };
            let fan = fan_in(layer, &input) as f64;
            let weight_bound = match scheme {
                InitScheme::FanIn => 1.0 / libm::sqrt(fan),
                InitScheme::Siren if first => 1.0 / fan,
                InitScheme::Siren => libm::sqrt(6.0 / fan) / spec.w0,
            };
            let bias_bound = 1.0 / libm::sqrt(fan);
            let name = |p: &str| format!("{prefix}.{i}.{p}");
            let s = |v: &[usize]| v.to_vec();
            match *layer {
                LayerSpec::Dense { input, output } => {
                    self.push(name("weight"), uniform(&[input, output], weight_bound, &mut rng), true)?;
                    self.push(name("bias"), uniform(&[output], bias_bound, &mut rng), true)?;
                }
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    self.push(
                        name("weight"),
                        uniform(&[out_channels, in_channels, kernel, kernel], weight_bound, &mut rng),
                        true,
                    )?;
                    self.push(name("bias"), uniform(&[out_channels, 1, 1], bias_bound, &mut rng), true)?;
                }
                LayerSpec::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    self.push(
                        name("weight"),
                        uniform(&[in_channels, out_channels, kernel, kernel], weight_bound, &mut rng),
                        true,
                    )?;
                    self.push(name("bias"), uniform(&[out_channels, 1, 1], bias_bound, &mut rng), true)?;
                }
                LayerSpec::Reparameterize { latent } => {
                    let n = input[0];
                    for head in ["mu", "logvar"] {
                        self.push(name(&format!("{head}.weight")), uniform(&[n, latent], weight_bound, &mut rng), true)?;
                        self.push(name(&format!("{head}.bias")), uniform(&[latent], bias_bound, &mut rng), true)?;
                    }
                }
                LayerSpec::Batchnorm { features } => {
                    let shape = if input.len() == 3 { s(&[features, 1, 1]) } else { s(&[features]) };
                    self.push(name("gamma"), Tensor::ones(&shape), true)?;
                    self.push(name("beta"), Tensor::zeros(&shape), true)?;
                    self.push(name("running_mean"), Tensor::zeros(&shape), false)?;
                    self.push(name("running_var"), Tensor::ones(&shape), false)?;
                }
                _ => continue,
            }
            if fan > 0.0 {
                first = false;
            }
        }
        Ok(())
    }

    pub fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> Result<()> {
        if self.index_of(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param { name, value, trainable });
        Ok(())
    }

    /// Keeps only the parameters for which `keep` holds.
    pub fn retain(&mut self, keep: impl FnMut(&Param<T>) -> bool) {
        self.params.retain(keep);
    }

    /// Appends all parameters of `other`; names must stay unique.
    pub fn merge(&mut self, other: ParamSet<T>) -> Result<()> {
        for p in other.params {
            self.push(p.name, p.value, p.trainable)?;
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index_of(name)
            .map(|i| &self.params[i].value)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
        if value.shape() != self.params[i].value.shape() {
            return Err(Error::shape("set parameter", value.shape(), self.params[i].value.shape()));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Places every tensor on `graph` as a leaf.
    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph<T>) -> Bound<'a, 'g, T> {
        Bound {
            set: self,
            vars: self.params.iter().map(|p| graph.leaf(p.value.clone())).collect(),
        }
    }
}

/// A [`ParamSet`] placed on a graph for one step.
pub struct Bound<'a, 'g, T: Float> {
    set: &'a ParamSet<T>,
    vars: Vec<Var<'g, T>>,
}

impl<'a, 'g, T: Float> Bound<'a, 'g, T> {
    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.set
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    /// Trainable leaves and their indices in the set.
    pub fn trainable(&self) -> (Vec<usize>, Vec<Var<'g, T>>) {
        self.set
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainable)
            .map(|(i, _)| (i, self.vars[i]))
            .unzip()
    }

    /// Parameters of one network, resolved as `{prefix}.{layer}.{param}`.
    pub fn scope<'s>(&'s self, prefix: &'s str) -> Scope<'s, 'a, 'g, T> {
        Scope { bound: self, prefix }
    }
}

/// Supplies layer parameters to a forward pass.
pub trait ParamSource<'g, T: Float> {
    fn param(&self, layer: usize, name: &str) -> Result<Var<'g, T>>;

    /// Full name used for running-statistics updates.
    fn param_name(&self, layer: usize, name: &str) -> String;
}

pub struct Scope<'s, 'a, 'g, T: Float> {
    bound: &'s Bound<'a, 'g, T>,
    prefix: &'s str,
}

impl<'g, T: Float> ParamSource<'g, T> for Scope<'_, '_, 'g, T> {
    fn param(&self, layer: usize, name: &str) -> Result<Var<'g, T>> {
        self.bound.get(&self.param_name(layer, name))
    }

    fn param_name(&self, layer: usize, name: &str) -> String {
        format!("{}.{layer}.{name}", self.prefix)
    }
}

/// SIREN initialization of `spec` with frequency `w0`.
pub fn siren_init<T: Float>(spec: &DecoderSpec, w0: f64, seed: u64) -> Result<ParamSet<T>> {
    let spec = DecoderSpec { w0, ..spec.clone() };
    ParamSet::init(&spec, "decoder", InitScheme::Siren, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::DEFAULT_W0;
    use alloc::vec;

    #[test]
    fn siren_bounds() {
        let spec = DecoderSpec::siren(2, 32, 32, 4, 1, DEFAULT_W0);
        let p: ParamSet<f64> = siren_init(&spec, DEFAULT_W0, 7).unwrap();
        let first = p.get("decoder.0.weight").unwrap();
        assert!(first.data().iter().all(|v| v.abs() <= 1.0 / 34.0));
        let later_bound = libm::sqrt(6.0 / 32.0) / 30.0;
        for name in ["decoder.2.weight", "decoder.4.weight", "decoder.6.weight", "decoder.8.weight"] {
            let w = p.get(name).unwrap();
            assert!(w.data().iter().all(|v| v.abs() <= later_bound), "{name}");
            // the bound is actually used, not something much smaller
            assert!(w.data().iter().any(|v| v.abs() > 0.8 * later_bound), "{name}");
        }
        assert_eq!(p.trainable_count(), spec.param_count().unwrap());
    }

    #[test]
    fn siren_bound_at_fan_in_34() {
        let b = libm::sqrt(6.0 / 34.0) / 30.0;
        assert!((b - 0.01400).abs() < 5e-6);
    }

    #[test]
    fn siren_bounds_over_many_draws() {
        // 10⁴ later-layer weights: 100·100 dense layer after a sin layer.
        let spec = DecoderSpec::siren(2, 4, 100, 2, 1, DEFAULT_W0);
        let p: ParamSet<f64> = siren_init(&spec, DEFAULT_W0, 1).unwrap();
        let w = p.get("decoder.2.weight").unwrap();
        assert_eq!(w.numel(), 10_000);
        let bound = libm::sqrt(6.0 / 100.0) / 30.0;
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn siren_rejects_other_activations() {
        let spec = DecoderSpec::mlp(4, &[8], vec![2], ActivationKind::Relu, None);
        assert!(siren_init::<f64>(&spec, 30.0, 0).is_err());
    }

    #[test]
    fn seed_determinism() {
        let spec = DecoderSpec::conv(4, 2, 6, 2, 1, ActivationKind::Elu);
        let a: ParamSet<f32> = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 3).unwrap();
        let b: ParamSet<f32> = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 3).unwrap();
        let c: ParamSet<f32> = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bits = |p: &ParamSet<f32>| p.params().iter().flat_map(|q| q.value.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn fan_in_bounds_and_names() {
        let spec = DecoderSpec::mlp(16, &[], vec![4], ActivationKind::Relu, None);
        let p: ParamSet<f64> = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 0).unwrap();
        let names: Vec<_> = p.params().iter().map(|q| q.name.as_str()).collect();
        assert_eq!(names, ["decoder.0.weight", "decoder.0.bias"]);
        assert!(p.get("decoder.0.weight").unwrap().data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::<f64>::new(0);
        p.push("a".into(), Tensor::zeros(&[1]), true).unwrap();
        assert!(p.push("a".into(), Tensor::zeros(&[1]), true).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut p = ParamSet::<f64>::new(0);
        p.push("a".into(), Tensor::zeros(&[2]), true).unwrap();
        assert!(p.set("a", Tensor::zeros(&[3])).is_err());
        p.set("a", Tensor::ones(&[2])).unwrap();
        assert_eq!(p.get("a").unwrap().data(), &[1.0, 1.0]);
    }
}
