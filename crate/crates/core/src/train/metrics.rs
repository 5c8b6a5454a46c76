use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Per-example `0.5·Σ(μ² + σ² − 1 − log σ²)` of `(B, k)` heads.
pub fn kl_diag_gaussian<T: Float>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<Vec<f64>> {
    if mu.shape() != logvar.shape() || mu.rank() == 0 {
        return Err(Error::shape("kl_diag_gaussian", mu.shape(), logvar.shape()));
    }
    let b = mu.shape()[0];
    let k = mu.numel() / b.max(1);
    Ok((0..b)
        .map(|i| {
            (i * k..(i + 1) * k)
                .map(|j| {
                    let (m, lv) = (mu.data()[j].to_f64(), logvar.data()[j].to_f64());
                    m * m + libm::exp(lv) - 1.0 - lv
                })
                .sum::<f64>()
                * 0.5
        })
        .collect())
}

/// `−elbo / (m·ln 2)`.
pub fn bits_per_dim(elbo_nats: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("bits per dimension needs m >= 1"));
    }
    Ok(-elbo_nats / (m as f64 * core::f64::consts::LN_2))
}

fn per_example<T: Float>(x: &Tensor<T>, y: &Tensor<T>) -> Result<(usize, usize)> {
    if x.shape() != y.shape() || x.rank() == 0 || x.shape()[0] == 0 {
        return Err(Error::shape("per-example error", x.shape(), y.shape()));
    }
    let b = x.shape()[0];
    Ok((b, x.numel() / b))
}

/// Summed squared error of each example.
pub fn summed_se<T: Float>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<f64>> {
    let (b, m) = per_example(x, y)?;
    let (xd, yd) = (x.data(), y.data());
    Ok((0..b)
        .map(|i| {
            (i * m..(i + 1) * m)
                .map(|j| {
                    let d = xd[j].to_f64() - yd[j].to_f64();
                    d * d
                })
                .sum()
        })
        .collect())
}

/// `10·log10(peak² / MSE)` of each example; `+∞` for an exact match.
pub fn psnr<T: Float>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<Vec<f64>> {
    let (_, m) = per_example(x, y)?;
    Ok(summed_se(x, y)?
        .into_iter()
        .map(|se| 10.0 * libm::log10(peak * peak / (se / m as f64)))
        .collect())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
