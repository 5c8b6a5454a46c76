use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamSource;
use super::spec::{DecoderSpec, LayerSpec};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::{Conv2dGeometry, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass state: batchnorm mode, reparameterization noise, and what the
/// pass produced besides its output.
pub struct ForwardCtx<'g, T: Float> {
    pub mode: Mode,
    /// `ε` of shape `(B, latent)` for the reparameterize layer.
    pub noise: Option<Var<'g, T>>,
    /// `(μ, log σ²)` emitted by the reparameterize layer.
    pub heads: Option<(Var<'g, T>, Var<'g, T>)>,
    /// New running statistics, keyed by full parameter name.
    pub bn_updates: Vec<(String, Tensor<T>)>,
}

impl<'g, T: Float> ForwardCtx<'g, T> {
    pub fn new(mode: Mode) -> Self {
        ForwardCtx {
            mode,
            noise: None,
            heads: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn with_noise(mode: Mode, noise: Var<'g, T>) -> Self {
        ForwardCtx {
            noise: Some(noise),
            ..Self::new(mode)
        }
    }
}

/// Runs the whole network on `input` of shape `(B, …input_shape)` or, for
/// coordinate networks, `(B, P, coord_dim + k)`.
pub fn forward<'g, T: Float>(spec: &DecoderSpec, params: &impl ParamSource<'g, T>, input: Var<'g, T>, ctx: &mut ForwardCtx<'g, T>) -> Result<Var<'g, T>> {
    forward_from(spec, params, 0, input, ctx)
}

/// Runs layers `start..` on an input shaped like the output of layer
/// `start − 1`.
pub fn forward_from<'g, T: Float>(
    spec: &DecoderSpec,
    params: &impl ParamSource<'g, T>,
    start: usize,
    input: Var<'g, T>,
    ctx: &mut ForwardCtx<'g, T>,
) -> Result<Var<'g, T>> {
    let shapes = spec.validate()?;
    let expected = if start == 0 { spec.input_shape() } else { shapes[start - 1].clone() };
    let lead = if spec.is_implicit() { 2 } else { 1 };
    let got = input.shape();
    if got.len() != lead + expected.len() || got[lead..] != expected[..] {
        return Err(Error::Layer {
            index: start,
            layer: String::from("input"),
            source: Error::shape("forward", &got, &expected).into(),
        });
    }
    let mut x = input;
    for (index, layer) in spec.layers.iter().enumerate().skip(start) {
        x = apply_layer(spec, params, index, layer, lead, x, ctx).map_err(|e| Error::Layer {
            index,
            layer: layer.name(),
            source: e.into(),
        })?;
    }
    Ok(x)
}

fn apply_layer<'g, T: Float>(
    spec: &DecoderSpec,
    params: &impl ParamSource<'g, T>,
    index: usize,
    layer: &LayerSpec,
    lead: usize,
    x: Var<'g, T>,
    ctx: &mut ForwardCtx<'g, T>,
) -> Result<Var<'g, T>> {
    let p = |name: &str| params.param(index, name);
    match *layer {
        LayerSpec::Dense { .. } => x.matmul(p("weight")?)?.add(p("bias")?),
        LayerSpec::Conv { stride, padding, .. } => x.conv2d(p("weight")?, Conv2dGeometry::new(stride, padding))?.add(p("bias")?),
        LayerSpec::ConvTranspose { stride, padding, .. } => x.conv2d_transpose(p("weight")?, Conv2dGeometry::new(stride, padding), None)?.add(p("bias")?),
        LayerSpec::Upsample { factor } => x.upsample(factor),
        LayerSpec::Activation { kind } => kind.apply(x, spec.w0),
        LayerSpec::Batchnorm { .. } => {
            let mean_name = params.param_name(index, "running_mean");
            let var_name = params.param_name(index, "running_var");
            let rm = p("running_mean")?.value();
            let rv = p("running_var")?.value();
            let (y, stats) = batchnorm(x, p("gamma")?, p("beta")?, &rm, &rv, ctx.mode)?;
            if let Some((m, v)) = stats {
                ctx.bn_updates.push((mean_name, m));
                ctx.bn_updates.push((var_name, v));
            }
            Ok(y)
        }
        LayerSpec::Reparameterize { .. } => {
            let mu = x.matmul(p("mu.weight")?)?.add(p("mu.bias")?)?;
            let logvar = x.matmul(p("logvar.weight")?)?.add(p("logvar.bias")?)?;
            let eps = ctx.noise.ok_or_else(|| Error::invalid("reparameterize layer needs a noise tensor"))?;
            if eps.shape() != mu.shape() {
                return Err(Error::shape("reparameterize noise", &eps.shape(), &mu.shape()));
            }
            let sigma = logvar.scale(0.5)?.exp()?;
            ctx.heads = Some((mu, logvar));
            mu.add(sigma.mul(eps)?)
        }
        LayerSpec::Reshape { ref shape } => {
            let s = x.shape();
            let mut target = s[..lead].to_vec();
            target.extend_from_slice(shape);
            x.reshape(&target)
        }
    }
}

/// Batch normalization over every axis except the feature axis (axis 1 for
/// rank-4 input, the last axis otherwise). Returns the updated running
/// statistics in train mode.
#[allow(clippy::type_complexity)]
pub fn batchnorm<'g, T: Float>(
    x: Var<'g, T>,
    gamma: Var<'g, T>,
    beta: Var<'g, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<(Var<'g, T>, Option<(Tensor<T>, Tensor<T>)>)> {
    let shape = x.shape();
    let rank = shape.len();
    if rank < 2 {
        return Err(Error::InvalidShape {
            op: "batchnorm",
            shape,
            reason: "needs a batch axis and a feature axis",
        });
    }
    let axes: Vec<usize> = if rank == 4 { alloc::vec![0, 2, 3] } else { (0..rank - 1).collect() };
    let g = x.graph();
    match mode {
        Mode::Train => {
            if shape[0] < 2 {
                return Err(Error::InvalidShape {
                    op: "batchnorm",
                    shape,
                    reason: "train mode needs a batch of at least 2",
                });
            }
            let count: usize = axes.iter().map(|&a| shape[a]).product();
            let mean = x.mean_axes(&axes, true)?;
            let centered = x.sub(mean)?;
            let var = centered.square()?.mean_axes(&axes, true)?;
            let xhat = centered.div(var.add_scalar(BN_EPS)?.sqrt()?)?;
            let y = xhat.mul(gamma)?.add(beta)?;
            let m = T::from_f64(BN_MOMENTUM);
            let keep = T::ONE - m;
            let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
            let stat_shape = running_mean.shape();
            let batch_mean = mean.value().reshape(stat_shape)?;
            let batch_var = var.value().reshape(stat_shape)?;
            let new_mean = running_mean.zip_with(&batch_mean, "batchnorm", |r, b| keep * r + m * b)?;
            let new_var = running_var.zip_with(&batch_var, "batchnorm", |r, b| keep * r + m * b * unbias)?;
            Ok((y, Some((new_mean, new_var))))
        }
        Mode::Eval => {
            let inv_std = running_var.map(|v| T::ONE / (v + T::from_f64(BN_EPS)).sqrt());
            let xhat = x.sub(g.leaf(running_mean.clone()))?.mul(g.leaf(inv_std))?;
            Ok((xhat.mul(gamma)?.add(beta)?, None))
        }
    }
}

/// `μ + σ ⊙ ε`.
pub fn reparameterize<T: Float>(mu: &Tensor<T>, sigma: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape("reparameterize", mu.shape(), sigma.shape()));
    }
    if let Some(&s) = sigma.data().iter().find(|&&s| !(s > T::ZERO)) {
        return Err(Error::Domain {
            op: "reparameterize",
            value: s.to_f64(),
        });
    }
    mu.add(&sigma.mul(eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{check_gradient, check_second_order, objective};
    use crate::autodiff::Graph;
    use crate::nn::{ActivationKind, InitScheme, ParamSet};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn run(spec: &DecoderSpec, params: &ParamSet<f64>, input: Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        let g = Graph::new();
        let b = params.bind(&g);
        let mut ctx = ForwardCtx::new(mode);
        Ok(forward(spec, &b.scope("decoder"), g.leaf(input), &mut ctx)?.tensor())
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let spec = DecoderSpec::mlp(3, &[5], vec![2], ActivationKind::Tanh, None);
        let mut p = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 0).unwrap();
        for q in p.params_mut() {
            if q.name.ends_with("weight") {
                q.value = Tensor::zeros(q.value.shape());
            }
        }
        let out = run(&spec, &p, random(&[4, 3], 1), Mode::Eval).unwrap();
        let bias = p.get("decoder.2.bias").unwrap();
        for row in 0..4 {
            assert_eq!(&out.data()[row * 2..row * 2 + 2], bias.data());
        }
    }

    #[test]
    fn single_dense_layer() {
        let spec = DecoderSpec::mlp(2, &[], vec![2], ActivationKind::Relu, None);
        let mut p = ParamSet::new(0);
        p.push("decoder.0.weight".into(), Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true)
            .unwrap();
        p.push("decoder.0.bias".into(), Tensor::from_vec(vec![0.5, -0.5]), true).unwrap();
        let out = run(&spec, &p, Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(out.data(), &[4.5, 5.5]);
    }

    #[test]
    fn two_layer_hand_computation() {
        // z = [0.3, -0.7]; h = tanh(zW1 + b1); y = hW2 + b2
        let spec = DecoderSpec::mlp(2, &[2], vec![1], ActivationKind::Tanh, None);
        let mut p = ParamSet::new(0);
        p.push("decoder.0.weight".into(), Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap(), true)
            .unwrap();
        p.push("decoder.0.bias".into(), Tensor::from_vec(vec![0.1, 0.2]), true).unwrap();
        p.push("decoder.2.weight".into(), Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap(), true)
            .unwrap();
        p.push("decoder.2.bias".into(), Tensor::from_vec(vec![0.05]), true).unwrap();
        let out = run(&spec, &p, Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap(), Mode::Eval).unwrap();
        let h0 = libm::tanh(0.3 * 0.5 + -0.7 * 2.0 + 0.1);
        let h1 = libm::tanh(-0.3 + -0.7 * 0.25 + 0.2);
        let want = h0 * 1.5 + h1 * -2.0 + 0.05;
        assert!((out.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn input_shape_mismatch_names_layer() {
        let spec = DecoderSpec::mlp(3, &[4], vec![2], ActivationKind::Relu, None);
        let p = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 0).unwrap();
        match run(&spec, &p, Tensor::zeros(&[2, 5]), Mode::Eval) {
            Err(Error::Layer { layer, .. }) => assert_eq!(layer, "input"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_noise_is_an_error() {
        let spec = DecoderSpec::variational_mlp(3, &[4], vec![2], ActivationKind::Elu);
        let p = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 0).unwrap();
        assert!(matches!(run(&spec, &p, Tensor::zeros(&[2, 3]), Mode::Eval), Err(Error::Layer { index: 2, .. })));
    }

    #[test]
    fn reparameterize_examples() {
        let mu = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let sigma = Tensor::new(vec![1, 3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(reparameterize(&mu, &sigma, &Tensor::zeros(&[1, 3])).unwrap(), mu);
        let eps = Tensor::new(vec![1, 3], vec![0.3, -0.1, 0.9]).unwrap();
        assert_eq!(reparameterize(&Tensor::zeros(&[1, 3]), &Tensor::ones(&[1, 3]), &eps).unwrap(), eps);
        let bad = Tensor::new(vec![1, 3], vec![0.5, 0.0, 2.0]).unwrap();
        assert!(reparameterize(&mu, &bad, &eps).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let n = 100_000;
        let (m, s) = (1.5, 0.7);
        let eps = random(&[n, 1], 11);
        let z = reparameterize(&Tensor::full(&[n, 1], m), &Tensor::full(&[n, 1], s), &eps).unwrap();
        let mean = z.mean();
        assert!((mean - m).abs() < 3.0 * s / libm::sqrt(n as f64), "{mean}");
    }

    fn bn_params(c: usize, rank4: bool) -> (Tensor<f64>, Tensor<f64>) {
        let shape = if rank4 { vec![c, 1, 1] } else { vec![c] };
        (Tensor::zeros(&shape), Tensor::ones(&shape))
    }

    #[test]
    fn batchnorm_constant_batch_gives_shift() {
        let g = Graph::new();
        let x = g.leaf(Tensor::full(&[4, 3], 2.5));
        let beta = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        let (rm, rv) = bn_params(3, false);
        let (y, _) = batchnorm(x, g.ones(&[3]), g.leaf(beta.clone()), &rm, &rv, Mode::Train).unwrap();
        for row in 0..4 {
            for c in 0..3 {
                assert!((y.value().data()[row * 3 + c] - beta.data()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_normalizes_per_channel() {
        let g = Graph::new();
        let x = g.leaf(random(&[5, 2, 3, 3], 4).scale(3.0).add_scalar(7.0));
        let (rm, rv) = bn_params(2, true);
        let (y, stats) = batchnorm(x, g.ones(&[2, 1, 1]), g.zeros(&[2, 1, 1]), &rm, &rv, Mode::Train).unwrap();
        let y = y.tensor();
        for c in 0..2 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|b| (0..9).map(move |i| (b, i)))
                .map(|(b, i)| y.data()[b * 18 + c * 9 + i])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5 * 1.0 + 1e-6, "{var}");
        }
        let (m, v) = stats.unwrap();
        assert_eq!(m.shape(), &[2, 1, 1]);
        // momentum 0.1 from (0, 1) towards batch statistics near (7, 9)
        assert!((m.data()[0] - 0.7).abs() < 0.2);
        assert!(v.data()[0] > 1.0);
    }

    #[test]
    fn batchnorm_eval_identity() {
        let g = Graph::new();
        let input = random(&[3, 4], 9);
        let (rm, rv) = bn_params(4, false);
        let (y, stats) = batchnorm(g.leaf(input.clone()), g.ones(&[4]), g.zeros(&[4]), &rm, &rv, Mode::Eval).unwrap();
        assert!(stats.is_none());
        // only the variance guard separates the output from the input
        assert!(y.value().max_abs_diff(&input).unwrap() <= 1e-5 * input.data().iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }

    #[test]
    fn batchnorm_batch_of_one_rejected_in_train() {
        let g = Graph::new();
        let (rm, rv) = bn_params(2, false);
        assert!(batchnorm(g.zeros(&[1, 2]), g.ones(&[2]), g.zeros(&[2]), &rm, &rv, Mode::Train).is_err());
        assert!(batchnorm(g.zeros(&[1, 2]), g.ones(&[2]), g.zeros(&[2]), &rm, &rv, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_second_order() {
        let (rm, rv) = bn_params(2, false);
        let x = random(&[3, 2], 2);
        let gamma = Tensor::from_vec(vec![1.3, -0.6]);
        let weights = random(&[3, 2], 5);
        let r1 = check_gradient(
            |g, v| {
                let (y, _) = batchnorm(v, g.leaf(gamma.clone()), g.zeros(&[2]), &rm, &rv, Mode::Train)?;
                y.tanh()?.mul(g.leaf(weights.clone()))?.sum()
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r1.max_rel_error <= 1e-4, "{}", r1.max_rel_error);
        let r2 = check_second_order(
            |g, v| {
                let (y, _) = batchnorm(v, g.leaf(gamma.clone()), g.zeros(&[2]), &rm, &rv, Mode::Train)?;
                y.tanh()?.mul(g.leaf(weights.clone()))?.sum()
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r2.max_rel_error <= 1e-3, "{}", r2.max_rel_error);
    }

    /// Gradient checks of a scalar function of the network input for each
    /// architecture family.
    fn check_network(spec: &DecoderSpec, input_shape: &[usize], noise: Option<Tensor<f64>>) {
        let p = ParamSet::init(spec, "decoder", InitScheme::FanIn, 21).unwrap();
        let x = random(input_shape, 22).scale(0.5);
        let target = random(
            &{
                let mut s = vec![input_shape[0]];
                s.extend_from_slice(&spec.output_shape);
                s
            },
            23,
        );
        let objective = objective(|g, v| {
            // parameters enter as constants, input is differentiated
            let b = p.bind(g);
            let mut ctx = ForwardCtx::new(Mode::Train);
            ctx.noise = noise.clone().map(|n| g.leaf(n));
            let y = forward(spec, &b.scope("decoder"), v, &mut ctx)?;
            y.sub(g.leaf(target.clone()))?.square()?.mean()
        });
        let r1 = check_gradient(objective, &x, 1e-5).unwrap();
        assert!(r1.max_rel_error <= 1e-4, "first order {}", r1.max_rel_error);
        let r2 = check_second_order(objective, &x, 1e-5).unwrap();
        assert!(r2.max_rel_error <= 1e-3, "second order {}", r2.max_rel_error);
    }

    #[test]
    fn dense_network_gradients() {
        check_network(
            &DecoderSpec::mlp(3, &[5], vec![4], ActivationKind::Elu, Some(ActivationKind::Sigmoid)),
            &[2, 3],
            None,
        );
    }

    #[test]
    fn conv_network_gradients() {
        check_network(&DecoderSpec::conv(2, 2, 3, 1, 1, ActivationKind::Softplus), &[2, 2, 2, 2], None);
    }

    #[test]
    fn conv_transpose_network_gradients() {
        let spec = DecoderSpec {
            latent_shape: vec![2, 2, 2],
            coord_dim: 0,
            output_shape: vec![1, 5, 5],
            layers: vec![
                LayerSpec::ConvTranspose {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                    padding: 0,
                },
                LayerSpec::Activation { kind: ActivationKind::Swish },
                LayerSpec::Conv {
                    in_channels: 3,
                    out_channels: 1,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
            ],
            w0: 30.0,
        };
        check_network(&spec, &[2, 2, 2, 2], None);
    }

    #[test]
    fn variational_network_gradients() {
        let spec = DecoderSpec::variational_mlp(3, &[4], vec![2], ActivationKind::Tanh);
        check_network(&spec, &[2, 3], Some(random(&[2, 3], 30)));
    }

    #[test]
    fn siren_network_gradients() {
        let spec = DecoderSpec::siren(2, 2, 6, 2, 1, 3.0);
        check_network(&spec, &[1, 3, 4], None);
    }
}
