//! Randomized properties of the public API, each against an independent oracle.

use gon_core::gon::{gon_encode, Decoder, GonConfig};
use gon_core::nn::{ActivationKind, DecoderSpec, InitScheme, Mode, ParamSet};
use gon_core::tensor::Conv2dGeometry;
use gon_core::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn mlp(k: usize, d: usize) -> DecoderSpec {
    DecoderSpec::mlp(k, &[7], vec![d], ActivationKind::Tanh, Some(ActivationKind::Sigmoid))
}

fn init(spec: &DecoderSpec, seed: u64) -> ParamSet<f64> {
    ParamSet::init(spec, "decoder", InitScheme::FanIn, seed).unwrap()
}

fn encode(x: &Tensor<f64>, spec: &DecoderSpec, p: &ParamSet<f64>) -> Tensor<f64> {
    let z0 = Tensor::zeros(&[x.shape()[0], spec.latent_dim()]);
    gon_encode(x, spec, p, &z0, &GonConfig::default()).unwrap().z
}

fn decode(spec: &DecoderSpec, p: &ParamSet<f64>, z: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::new();
    let b = p.bind(&g);
    let scope = b.scope("decoder");
    Decoder::new(spec, &scope, Mode::Eval).run(g.leaf(z.clone())).unwrap().0.tensor()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_naive_loop(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed in 0u64..1000) {
        let a = uniform(&[m, k], seed);
        let b = uniform(&[k, n], seed + 1);
        let c = a.matmul(&b).unwrap();
        prop_assert_eq!(c.shape(), &[m, n]);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|l| a.data()[i * k + l] * b.data()[l * n + j]).sum();
                let got = c.data()[i * n + j];
                prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv(
        batch in 1usize..3,
        channels in 1usize..4,
        filters in 1usize..4,
        side in 3usize..9,
        kernel in 1usize..4,
        stride in 1usize..4,
        pad in 0usize..2,
        seed in 0u64..1000,
    ) {
        let geom = Conv2dGeometry::new(stride, pad.min(kernel - 1));
        let x = uniform(&[batch, channels, side, side], seed);
        let w = uniform(&[filters, channels, kernel, kernel], seed + 1);
        let cx = x.conv2d(&w, geom).unwrap();
        let y = uniform(cx.shape(), seed + 2);
        let ty = y.conv2d_transpose(&w, geom, Some((side, side))).unwrap();
        prop_assert_eq!(ty.shape(), x.shape());
        let (l, r) = (dot(&cx, &y), dot(&x, &ty));
        prop_assert!((l - r).abs() <= 1e-8 * l.abs().max(1.0), "{} vs {}", l, r);
    }

    #[test]
    fn create_graph_changes_no_values_and_mutates_no_inputs(n in 1usize..6, seed in 0u64..1000) {
        let x = uniform(&[n, n], seed);
        let before = x.clone();
        let grad = |create: bool| {
            let g = Graph::new();
            let v = g.leaf(x.clone());
            let y = v.matmul(v).unwrap().sin().unwrap().mul(v.square().unwrap()).unwrap().sum().unwrap();
            g.grad(y, &[v], create).unwrap().tensors().remove(0)
        };
        let (plain, recorded) = (grad(false), grad(true));
        prop_assert_eq!(plain.data(), recorded.data());
        prop_assert_eq!(x.data(), before.data());
    }

    #[test]
    fn latents_are_deterministic_and_example_separable(batch in 2usize..6, seed in 0u64..1000) {
        let (k, d) = (3, 10);
        let spec = mlp(k, d);
        let p = init(&spec, seed);
        let x = uniform(&[batch, d], seed + 1);
        let z = encode(&x, &spec, &p);
        let again = encode(&x, &spec, &p);
        prop_assert_eq!(z.data(), again.data());
        for i in 0..batch {
            let xi = Tensor::new(vec![1, d], x.data()[i * d..(i + 1) * d].to_vec()).unwrap();
            let zi = encode(&xi, &spec, &p);
            for (a, b) in zi.data().iter().zip(&z.data()[i * k..(i + 1) * k]) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nearby_data_gets_nearby_latents(seed in 0u64..1000, size in 1e-4f64..1.0) {
        let (k, d) = (4, 12);
        let spec = mlp(k, d);
        let p = init(&spec, seed);
        let x = uniform(&[1, d], seed + 1);
        let delta = uniform(&[1, d], seed + 2).scale(size);
        let dz = encode(&x.add(&delta).unwrap(), &spec, &p).sub(&encode(&x, &spec, &p)).unwrap();
        // z = (2/m) Jᵀ(x − F(0)), so ‖Δz‖ ≤ (2/m) ‖J‖_F ‖δ‖ with J at the origin
        let h = 1e-5;
        let mut jf2 = 0.0;
        for j in 0..k {
            let e = Tensor::from_fn(&[1, k], |i| if i == j { h } else { 0.0 });
            let col = decode(&spec, &p, &e).sub(&decode(&spec, &p, &e.neg())).unwrap();
            jf2 += col.data().iter().map(|v| (v / (2.0 * h)).powi(2)).sum::<f64>();
        }
        let bound = 2.0 / d as f64 * jf2.sqrt() * dot(&delta, &delta).sqrt();
        prop_assert!(dot(&dz, &dz).sqrt() <= bound * (1.0 + 1e-6), "{} > {}", dot(&dz, &dz).sqrt(), bound);
    }

    #[test]
    fn initialization_is_seed_deterministic(seed in 0u64..1000) {
        let spec = mlp(5, 9);
        let (a, b, c) = (init(&spec, seed), init(&spec, seed), init(&spec, seed + 1));
        let values = |p: &ParamSet<f64>| p.params().iter().flat_map(|q| q.value.data().to_vec()).collect::<Vec<_>>();
        prop_assert_eq!(values(&a), values(&b));
        prop_assert_ne!(values(&a), values(&c));
    }
}
