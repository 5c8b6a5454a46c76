use alloc::vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

const PARALLEL_EPS: f64 = 1e-6;

/// Spherical interpolation between `a` and `b`; linear when the two are
/// (anti)parallel to within `sin Ω < 1e-6`.
pub fn slerp<T: Float>(a: &Tensor<T>, b: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("slerp", a.shape(), b.shape()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain { op: "slerp", value: t });
    }
    let (na, nb) = (a.norm().to_f64(), b.norm().to_f64());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("slerp endpoints must be nonzero"));
    }
    let cos = (a.dot(b)?.to_f64() / (na * nb)).clamp(-1.0, 1.0);
    let omega = libm::acos(cos);
    let sin = libm::sin(omega);
    let (wa, wb) = if sin < PARALLEL_EPS {
        (1.0 - t, t)
    } else {
        (libm::sin((1.0 - t) * omega) / sin, libm::sin(t * omega) / sin)
    };
    a.scale(T::from_f64(wa)).add(&b.scale(T::from_f64(wb)))
}

/// Diagonal Gaussian moment fit of latents `(N, k)` with per-dimension
/// shape statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian<T> {
    pub mu: Tensor<T>,
    /// Population standard deviation.
    pub sigma: Tensor<T>,
    pub skewness: Tensor<T>,
    /// Kurtosis minus 3; zero for a normal distribution.
    pub excess_kurtosis: Tensor<T>,
}

pub fn fit_latent_gaussian<T: Float>(latents: &Tensor<T>) -> Result<LatentGaussian<T>> {
    if latents.rank() < 2 {
        return Err(Error::InvalidShape {
            op: "fit_latent_gaussian",
            shape: latents.shape().to_vec(),
            reason: "expected (N, k)",
        });
    }
    let n = latents.shape()[0];
    if n < 2 {
        return Err(Error::invalid("Gaussian fit needs at least two latents"));
    }
    let k = latents.numel() / n;
    let d = latents.data();
    let mut stats = vec![[0.0f64; 4]; k];
    for (j, s) in stats.iter_mut().enumerate() {
        let mean = (0..n).map(|i| d[i * k + j].to_f64()).sum::<f64>() / n as f64;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let c = d[i * k + j].to_f64() - mean;
            m2 += c * c;
            m3 += c * c * c;
            m4 += c * c * c * c;
        }
        let (m2, m3, m4) = (m2 / n as f64, m3 / n as f64, m4 / n as f64);
        let (skew, kurt) = if m2 > 0.0 {
            (m3 / libm::pow(m2, 1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        *s = [mean, libm::sqrt(m2), skew, kurt];
    }
    let col = |c: usize| Tensor::from_fn(&[k], |j| T::from_f64(stats[j][c]));
    Ok(LatentGaussian {
        mu: col(0),
        sigma: col(1),
        skewness: col(2),
        excess_kurtosis: col(3),
    })
}

/// `count` draws from `N(μ, diag σ²)`, shape `(count, k)`.
pub fn sample_latents<T: Float>(mu: &Tensor<T>, sigma: &Tensor<T>, count: usize, seed: u64) -> Result<Tensor<T>> {
    if mu.shape() != sigma.shape() {
        return Err(Error::shape("sample_latents", mu.shape(), sigma.shape()));
    }
    let k = mu.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(&[count, k], |i| {
        let j = i % k;
        let e: f64 = rng.sample(StandardNormal);
        T::from_f64(mu.data()[j].to_f64() + sigma.data()[j].to_f64() * e)
    }))
}
