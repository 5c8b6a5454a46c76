//! Finite-difference verification of every differentiable primitive and of
//! the composed objectives, at `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::check::{check_gradient, check_second_order};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::gon::{classifier_head_spec, classifier_loss, gon_loss, vgon_loss, Decoder, GonConfig, InferenceVariant, Likelihood};
use crate::nn::{batchnorm, siren_init, ActivationKind, Bound, DecoderSpec, InitScheme, Mode, ParamSet, ParamSource};
use crate::tensor::{Conv2dGeometry, Tensor};

pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub first_order: f64,
    pub second_order: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.first_order <= FIRST_ORDER_TOL && self.second_order <= SECOND_ORDER_TOL
    }
}

fn run<F>(name: &str, f: F, x: &Tensor<f64>) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let first = check_gradient(&f, x, FD_STEP)?.max_rel_error;
    let second = check_second_order(&f, x, FD_STEP)?.max_rel_error;
    Ok(CheckReport {
        name: name.into(),
        first_order: first,
        second_order: second,
    })
}

/// Values in `±[0.2, 1.2]`, away from the kinks of piecewise ops.
fn point(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = 0.2 + rng.random::<f64>();
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| 0.5 + rng.random::<f64>())
}

/// `Σ c ⊙ sin(y)` with fixed weights `c`: a nonlinear read-out, so second
/// derivatives reach the backward rule of the op producing `y`.
fn readout<'g>(y: Var<'g, f64>) -> Result<Var<'g, f64>> {
    let n = y.numel();
    let c = Tensor::from_fn(&y.shape(), |i| 0.5 + (i as f64 * 0.37) % 1.0 - 0.3 * (i % 2) as f64 / n.max(1) as f64);
    y.sin()?.mul(y.graph().leaf(c))?.sum()
}

/// Both operands of a binary op, sliced out of one input vector.
fn halves<'g>(x: Var<'g, f64>, n: usize) -> Result<(Var<'g, f64>, Var<'g, f64>)> {
    Ok((x.slice(0, 0, n)?, x.slice(0, n, n)?))
}

/// Parameters of a bound set with one entry replaced by `var`.
struct Override<'s, 'a, 'g> {
    bound: &'s Bound<'a, 'g, f64>,
    prefix: &'s str,
    name: &'s str,
    var: Var<'g, f64>,
}

impl<'g> ParamSource<'g, f64> for Override<'_, '_, 'g> {
    fn param(&self, layer: usize, name: &str) -> Result<Var<'g, f64>> {
        let full = self.param_name(layer, name);
        if full == self.name {
            return Ok(self.var);
        }
        self.bound.get(&full)
    }

    fn param_name(&self, layer: usize, name: &str) -> String {
        format!("{}.{layer}.{name}", self.prefix)
    }
}

fn primitive_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let v6 = point(&[6], rng);
    let v12 = point(&[12], rng);
    let p6 = positive(&[6], rng);
    let mut pos_pair = p6.clone().into_data();
    pos_pair.extend(positive(&[6], rng).into_data());
    let pos_pair = Tensor::from_vec(pos_pair);

    out.push(run("add", |_, x| halves(x, 6).and_then(|(a, b)| readout(a.add(b)?)), &v12)?);
    out.push(run("sub", |_, x| halves(x, 6).and_then(|(a, b)| readout(a.sub(b)?)), &v12)?);
    out.push(run("mul", |_, x| halves(x, 6).and_then(|(a, b)| readout(a.mul(b)?)), &v12)?);
    out.push(run("div", |_, x| halves(x, 6).and_then(|(a, b)| readout(a.div(b)?)), &pos_pair)?);
    out.push(run("neg", |_, x| readout(x.neg()?), &v6)?);
    out.push(run("scale", |_, x| readout(x.scale(-1.7)?), &v6)?);
    out.push(run("add_scalar", |_, x| readout(x.add_scalar(0.4)?), &v6)?);
    out.push(run("powf", |_, x| readout(x.powf(2.5)?), &p6)?);
    out.push(run("square", |_, x| readout(x.square()?), &v6)?);
    out.push(run("exp", |_, x| readout(x.exp()?), &v6)?);
    out.push(run("ln", |_, x| readout(x.ln()?), &p6)?);
    out.push(run("sin", |_, x| readout(x.sin()?), &v6)?);
    out.push(run("cos", |_, x| readout(x.cos()?), &v6)?);
    out.push(run("sqrt", |_, x| readout(x.sqrt()?), &p6)?);
    out.push(run("tanh", |_, x| readout(x.tanh()?), &v6)?);
    out.push(run("sigmoid", |_, x| readout(x.sigmoid()?), &v6)?);
    out.push(run("softplus", |_, x| readout(x.softplus()?), &v6)?);
    out.push(run("relu", |_, x| readout(x.relu()?), &v6)?);
    out.push(run("elu", |_, x| readout(x.elu()?), &v6)?);
    out.push(run("step", |_, x| readout(x.mul(x.step())?), &v6)?);
    for kind in ActivationKind::ALL {
        let name = format!("activation {}", kind.name());
        out.push(run(&name, move |_, x| readout(kind.apply(x, 1.5)?), &v6)?);
    }

    out.push(run(
        "matmul",
        |_, x| {
            let a = x.slice(0, 0, 6)?.reshape(&[2, 3])?;
            let b = x.slice(0, 6, 6)?.reshape(&[3, 2])?;
            readout(a.matmul(b)?)
        },
        &v12,
    )?);
    out.push(run(
        "matmul (batched lhs)",
        |_, x| {
            let a = x.slice(0, 0, 8)?.reshape(&[2, 2, 2])?;
            let b = x.slice(0, 8, 4)?.reshape(&[2, 2])?;
            readout(a.matmul(b)?)
        },
        &v12,
    )?);
    out.push(run(
        "transpose",
        |_, x| readout(x.reshape(&[2, 3])?.transpose()?.matmul(x.reshape(&[2, 3])?)?),
        &v6,
    )?);
    out.push(run("reshape", |_, x| readout(x.reshape(&[3, 2])?.square()?), &v6)?);
    out.push(run("sum_to", |_, x| readout(x.reshape(&[2, 3])?.square()?.sum_to(&[1, 3])?), &v6)?);
    out.push(run("broadcast_to", |_, x| readout(x.reshape(&[1, 6])?.broadcast_to(&[2, 6])?.square()?), &v6)?);
    out.push(run("sum", |_, x| x.square()?.sum()?.sin(), &v6)?);
    out.push(run("mean", |_, x| x.square()?.mean()?.sin(), &v6)?);
    out.push(run("sum_axes", |_, x| readout(x.reshape(&[2, 3])?.square()?.sum_axes(&[1], true)?), &v6)?);
    out.push(run("mean_axes", |_, x| readout(x.reshape(&[2, 3])?.square()?.mean_axes(&[0], false)?), &v6)?);
    out.push(run("slice", |_, x| readout(x.reshape(&[2, 3])?.square()?.slice(1, 1, 2)?), &v6)?);
    out.push(run("pad", |_, x| readout(x.reshape(&[2, 3])?.square()?.pad(1, 1, 2)?.add_scalar(0.1)?), &v6)?);
    out.push(run(
        "concat",
        |g, x| {
            let a = x.slice(0, 0, 4)?.reshape(&[2, 2])?;
            let b = x.slice(0, 4, 2)?.reshape(&[2, 1])?;
            readout(g.concat(&[a.square()?, b], 1)?)
        },
        &v6,
    )?);

    let g1 = Conv2dGeometry::new(1, 1);
    let g2 = Conv2dGeometry::new(2, 1);
    // image (1, 1, 3, 3) then filters (2, 1, 2, 2)
    let x17 = point(&[17], rng);
    out.push(run(
        "conv2d",
        move |_, x| {
            let img = x.slice(0, 0, 9)?.reshape(&[1, 1, 3, 3])?;
            let w = x.slice(0, 9, 8)?.reshape(&[2, 1, 2, 2])?;
            readout(img.conv2d(w, g1)?)
        },
        &x17,
    )?);
    out.push(run(
        "conv2d (stride 2)",
        move |_, x| {
            let img = x.slice(0, 0, 9)?.reshape(&[1, 1, 3, 3])?;
            let w = x.slice(0, 9, 8)?.reshape(&[2, 1, 2, 2])?;
            readout(img.conv2d(w, g2)?)
        },
        &x17,
    )?);
    // output-space (1, 2, 2, 2) then filters (2, 1, 2, 2)
    let x16 = point(&[16], rng);
    out.push(run(
        "conv2d_transpose",
        move |_, x| {
            let y = x.slice(0, 0, 8)?.reshape(&[1, 2, 2, 2])?;
            let w = x.slice(0, 8, 8)?.reshape(&[2, 1, 2, 2])?;
            readout(y.conv2d_transpose(w, g2, Some((3, 3)))?)
        },
        &x16,
    )?);
    // image (1, 1, 3, 3) then output-space (1, 2, 4, 4)
    let x41 = point(&[41], rng);
    out.push(run(
        "conv2d_weight",
        move |_, x| {
            let img = x.slice(0, 0, 9)?.reshape(&[1, 1, 3, 3])?;
            let y = x.slice(0, 9, 32)?.reshape(&[1, 2, 4, 4])?;
            readout(img.conv2d_weight(y, g1, (2, 2))?)
        },
        &x41,
    )?);
    let x8 = point(&[8], rng);
    out.push(run("upsample", |_, x| readout(x.reshape(&[1, 2, 2, 2])?.square()?.upsample(2)?), &x8)?);
    out.push(run("sum_pool", |_, x| readout(x.reshape(&[1, 2, 2, 2])?.square()?.sum_pool(2)?), &x8)?);
    out.push(run(
        "batchnorm (train)",
        |g, x| {
            let rm = Tensor::zeros(&[2]);
            let rv = Tensor::ones(&[2]);
            let gamma = g.leaf(Tensor::from_vec(vec![1.3, -0.7]));
            let beta = g.leaf(Tensor::from_vec(vec![0.1, 0.2]));
            let (y, _) = batchnorm(x.reshape(&[4, 2])?, gamma, beta, &rm, &rv, Mode::Train)?;
            readout(y)
        },
        &x8,
    )?);
    Ok(out)
}

fn composed_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let spec = DecoderSpec::mlp(2, &[3], vec![4], ActivationKind::Tanh, Some(ActivationKind::Sigmoid));
    let params: ParamSet<f64> = ParamSet::init(&spec, "decoder", InitScheme::FanIn, 1)?;
    let x = Tensor::from_fn(&[2, 4], |_| rng.random::<f64>());

    for (label, variant) in [
        ("gon objective", InferenceVariant::canonical()),
        ("gon objective (3 steps)", InferenceVariant::multi(3, false)),
    ] {
        for name in ["decoder.0.weight", "decoder.2.weight"] {
            let w = params.get(name)?.clone();
            let (spec, params, x) = (&spec, &params, &x);
            out.push(run(
                &format!("{label} wrt {name}"),
                move |g, v| {
                    let b = params.bind(g);
                    let src = Override {
                        bound: &b,
                        prefix: "decoder",
                        name,
                        var: v,
                    };
                    let dec = Decoder::new(spec, &src, Mode::Train);
                    let cfg = GonConfig { variant, ..Default::default() };
                    Ok(gon_loss(&dec, g.leaf(x.clone()), g.zeros(&[2, 2]), &cfg)?.loss)
                },
                &w,
            )?);
        }
    }

    let vspec = DecoderSpec::variational_mlp(2, &[3], vec![4], ActivationKind::Tanh);
    let vparams: ParamSet<f64> = ParamSet::init(&vspec, "decoder", InitScheme::FanIn, 2)?;
    let eps = point(&[2, 2], rng);
    let w = vparams.get("decoder.0.weight")?.clone();
    out.push(run(
        "variational objective wrt decoder.0.weight",
        |g, v| {
            let b = vparams.bind(g);
            let src = Override {
                bound: &b,
                prefix: "decoder",
                name: "decoder.0.weight",
                var: v,
            };
            let mut dec = Decoder::new(&vspec, &src, Mode::Train);
            dec.noise = Some(g.leaf(eps.clone()));
            Ok(vgon_loss(&dec, g.leaf(x.clone()), 2.0, Likelihood::Bernoulli)?.loss)
        },
        &w,
    )?);

    let ispec = DecoderSpec::siren(2, 2, 3, 1, 1, 3.0);
    let iparams = siren_init::<f64>(&ispec, 3.0, 3)?;
    let coords = Tensor::from_fn(&[3, 2], |i| (i as f64 - 2.5) / 3.0);
    let signals = Tensor::from_fn(&[2, 3, 1], |_| rng.random::<f64>());
    let w = iparams.get("decoder.0.weight")?.clone();
    out.push(run(
        "implicit objective wrt decoder.0.weight",
        |g, v| {
            let b = iparams.bind(g);
            let src = Override {
                bound: &b,
                prefix: "decoder",
                name: "decoder.0.weight",
                var: v,
            };
            let mut dec = Decoder::new(&ispec, &src, Mode::Train);
            dec.coords = Some(g.leaf(coords.clone()));
            Ok(gon_loss(&dec, g.leaf(signals.clone()), g.zeros(&[2, 2]), &GonConfig::default())?.loss)
        },
        &w,
    )?);

    let head = classifier_head_spec(2, 3);
    let mut cparams = params.clone();
    cparams.add_network(&head, "head", InitScheme::FanIn, 4)?;
    let w = cparams.get("decoder.0.weight")?.clone();
    out.push(run(
        "classifier objective wrt decoder.0.weight",
        |g, v| {
            let b = cparams.bind(g);
            let src = Override {
                bound: &b,
                prefix: "decoder",
                name: "decoder.0.weight",
                var: v,
            };
            let hs = b.scope("head");
            let dec = Decoder::new(&spec, &src, Mode::Train);
            Ok(classifier_loss(&dec, &head, &hs, g.leaf(x.clone()), &[0, 2], g.zeros(&[2, 2]), &GonConfig::default())?.loss)
        },
        &w,
    )?);
    Ok(out)
}

/// Every check of the suite, in a fixed order.
pub fn gradcheck_suite() -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = primitive_checks(&mut rng)?;
    out.extend(composed_checks(&mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let reports = gradcheck_suite().unwrap();
        assert!(reports.len() > 50);
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
    }
}
