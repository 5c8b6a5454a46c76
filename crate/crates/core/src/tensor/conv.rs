//! 2-D convolution and its two adjoints, plus nearest upsampling.
//!
//! `conv2d`, `conv2d_transpose` and `conv2d_weight` are the three bilinear
//! maps of one convolution: each one's derivative with respect to either
//! argument is another member of the set, which is what lets the autodiff
//! graph differentiate convolutions any number of times.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dGeometry { stride, padding }
    }

    /// `floor((n + 2·pad − k)/stride) + 1`, or `None` if the kernel does not fit.
    pub fn output_len(&self, n: usize, k: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if self.stride == 0 || k == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }

    /// Natural input length recovered by a transposed convolution.
    pub fn transpose_len(&self, n: usize, k: usize) -> Option<usize> {
        ((n.checked_sub(1)? * self.stride) + k).checked_sub(2 * self.padding)
    }
}

struct Dims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected rank 4",
        }),
    }
}

fn geometry(op: &'static str, x: [usize; 4], w: [usize; 4], g: Conv2dGeometry) -> Result<Dims> {
    let [b, c, h, wd] = x;
    let [f, wc, kh, kw] = w;
    if c != wc {
        return Err(Error::shape(op, &x, &w));
    }
    let (ho, wo) = match (g.output_len(h, kh), g.output_len(wd, kw)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => {
            return Err(Error::InvalidShape {
                op,
                shape: x.to_vec(),
                reason: "kernel does not fit the padded input or stride is zero",
            })
        }
    };
    Ok(Dims {
        b,
        c,
        h,
        w: wd,
        f,
        kh,
        kw,
        ho,
        wo,
    })
}

/// Fills `cols` (CKK × HoWo) from one image. When `transposed` is set the
/// layout is (HoWo × CKK).
fn im2col<T: Float>(img: &[T], d: &Dims, g: Conv2dGeometry, cols: &mut [T], transposed: bool) {
    let hw = d.hw_out();
    let ckk = d.ckk();
    for c in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                for oi in 0..d.ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    for oj in 0..d.wo {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        let v = if ii >= 0 && jj >= 0 && (ii as usize) < d.h && (jj as usize) < d.w {
                            img[(c * d.h + ii as usize) * d.w + jj as usize]
                        } else {
                            T::ZERO
                        };
                        let col = oi * d.wo + oj;
                        if transposed {
                            cols[col * ckk + row] = v;
                        } else {
                            cols[row * hw + col] = v;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` (CKK × HoWo) back into an image.
fn col2im<T: Float>(cols: &[T], d: &Dims, g: Conv2dGeometry, img: &mut [T]) {
    let hw = d.hw_out();
    for c in 0..d.c {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                for oi in 0..d.ho {
                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ii < 0 || ii as usize >= d.h {
                        continue;
                    }
                    for oj in 0..d.wo {
                        let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                        if jj < 0 || jj as usize >= d.w {
                            continue;
                        }
                        img[(c * d.h + ii as usize) * d.w + jj as usize] += cols[row * hw + oi * d.wo + oj];
                    }
                }
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// Cross-correlation of an image batch `(B,C,H,W)` with filters `(F,C,kH,kW)`.
    pub fn conv2d(&self, weight: &Self, g: Conv2dGeometry) -> Result<Self> {
        let d = geometry("conv2d", rank4("conv2d", self.shape())?, rank4("conv2d", weight.shape())?, g)?;
        let (ckk, hw) = (d.ckk(), d.hw_out());
        let mut cols = vec![T::ZERO; ckk * hw];
        let mut out = vec![T::ZERO; d.b * d.f * hw];
        let img_len = d.c * d.h * d.w;
        for bi in 0..d.b {
            im2col(&self.data()[bi * img_len..(bi + 1) * img_len], &d, g, &mut cols, false);
            T::gemm(d.f, ckk, hw, weight.data(), &cols, &mut out[bi * d.f * hw..(bi + 1) * d.f * hw]);
        }
        Tensor::new(vec![d.b, d.f, d.ho, d.wo], out)
    }

    /// Adjoint of [`Tensor::conv2d`] in its image argument: maps `(B,F,Ho,Wo)`
    /// back to `(B,C,H,W)`. `out_hw` defaults to the natural transposed size.
    pub fn conv2d_transpose(&self, weight: &Self, g: Conv2dGeometry, out_hw: Option<(usize, usize)>) -> Result<Self> {
        let [b, f, ho, wo] = rank4("conv2d_transpose", self.shape())?;
        let ws = rank4("conv2d_transpose", weight.shape())?;
        if ws[0] != f {
            return Err(Error::shape("conv2d_transpose", self.shape(), weight.shape()));
        }
        let (h, w) = match out_hw {
            Some(hw) => hw,
            None => match (g.transpose_len(ho, ws[2]), g.transpose_len(wo, ws[3])) {
                (Some(h), Some(w)) => (h, w),
                _ => {
                    return Err(Error::InvalidShape {
                        op: "conv2d_transpose",
                        shape: self.shape().to_vec(),
                        reason: "no valid output size",
                    })
                }
            },
        };
        let d = geometry("conv2d_transpose", [b, ws[1], h, w], ws, g)?;
        if d.ho != ho || d.wo != wo {
            return Err(Error::shape("conv2d_transpose", self.shape(), &[b, ws[1], h, w]));
        }
        let (ckk, hw) = (d.ckk(), d.hw_out());
        let wt = weight.reshape(&[f, ckk])?.transpose()?;
        let mut cols = vec![T::ZERO; ckk * hw];
        let img_len = d.c * h * w;
        let mut out = vec![T::ZERO; b * img_len];
        for bi in 0..b {
            T::gemm(ckk, f, hw, wt.data(), &self.data()[bi * f * hw..(bi + 1) * f * hw], &mut cols);
            col2im(&cols, &d, g, &mut out[bi * img_len..(bi + 1) * img_len]);
        }
        Tensor::new(vec![b, d.c, h, w], out)
    }

    /// Adjoint of [`Tensor::conv2d`] in its filter argument: given images
    /// `self` `(B,C,H,W)` and output-space tensor `y` `(B,F,Ho,Wo)`, returns
    /// `(F,C,kH,kW)` with `⟨conv2d(x, w), y⟩ = ⟨w, conv2d_weight(x, y)⟩`.
    pub fn conv2d_weight(&self, y: &Self, g: Conv2dGeometry, kernel: (usize, usize)) -> Result<Self> {
        let xs = rank4("conv2d_weight", self.shape())?;
        let ys = rank4("conv2d_weight", y.shape())?;
        let d = geometry("conv2d_weight", xs, [ys[1], xs[1], kernel.0, kernel.1], g)?;
        if ys[0] != d.b || d.ho != ys[2] || d.wo != ys[3] {
            return Err(Error::shape("conv2d_weight", self.shape(), y.shape()));
        }
        let (ckk, hw) = (d.ckk(), d.hw_out());
        let mut cols_t = vec![T::ZERO; hw * ckk];
        let mut part = vec![T::ZERO; d.f * ckk];
        let mut acc = vec![T::ZERO; d.f * ckk];
        let img_len = d.c * d.h * d.w;
        for bi in 0..d.b {
            im2col(&self.data()[bi * img_len..(bi + 1) * img_len], &d, g, &mut cols_t, true);
            T::gemm(d.f, hw, ckk, &y.data()[bi * d.f * hw..(bi + 1) * d.f * hw], &cols_t, &mut part);
            acc.iter_mut().zip(&part).for_each(|(a, &p)| *a += p);
        }
        Tensor::new(vec![d.f, d.c, d.kh, d.kw], acc)
    }

    /// Nearest-neighbour upsampling of `(B,C,H,W)` by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Self> {
        let [b, c, h, w] = rank4("upsample", self.shape())?;
        if factor == 0 {
            return Err(Error::invalid("upsample: factor must be at least 1"));
        }
        let (h2, w2) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(b * c * h2 * w2);
        for plane in self.data().chunks(h * w) {
            for i in 0..h2 {
                let row = &plane[(i / factor) * w..(i / factor + 1) * w];
                for j in 0..w2 {
                    out.push(row[j / factor]);
                }
            }
        }
        Tensor::new(vec![b, c, h2, w2], out)
    }

    /// Sums non-overlapping `factor × factor` blocks; the adjoint of
    /// [`Tensor::upsample_nearest`].
    pub fn sum_pool(&self, factor: usize) -> Result<Self> {
        let [b, c, h, w] = rank4("sum_pool", self.shape())?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidShape {
                op: "sum_pool",
                shape: self.shape().to_vec(),
                reason: "spatial extents must be multiples of the factor",
            });
        }
        let (h2, w2) = (h / factor, w / factor);
        let mut out = vec![T::ZERO; b * c * h2 * w2];
        for (p, plane) in self.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h {
                for j in 0..w {
                    dst[(i / factor) * w2 + j / factor] += plane[i * w + j];
                }
            }
        }
        Tensor::new(vec![b, c, h2, w2], out)
    }

    /// Mean over non-overlapping blocks.
    pub fn avg_pool(&self, factor: usize) -> Result<Self> {
        Ok(self.sum_pool(factor)?.scale(T::ONE / T::from_f64((factor * factor) as f64)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Direct six-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: Conv2dGeometry) -> Tensor<f64> {
        let [b, c, h, wd] = rank4("t", x.shape()).unwrap();
        let [f, _, kh, kw] = rank4("t", w.shape()).unwrap();
        let ho = g.output_len(h, kh).unwrap();
        let wo = g.output_len(wd, kw).unwrap();
        let mut out = vec![0.0; b * f * ho * wo];
        for bi in 0..b {
            for fi in 0..f {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                                    let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                                    if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= wd {
                                        continue;
                                    }
                                    s += x.data()[((bi * c + ci) * h + ii as usize) * wd + jj as usize] * w.data()[((fi * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((bi * f + fi) * ho + oi) * wo + oj] = s;
                    }
                }
            }
        }
        Tensor::new(vec![b, f, ho, wo], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 4, 5], |i| i as f64);
        let w = Tensor::ones(&[1, 1, 1, 1]);
        assert_eq!(x.conv2d(&w, Conv2dGeometry::new(1, 0)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 2.0);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, Conv2dGeometry::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn output_size_formula() {
        let g = Conv2dGeometry::new(2, 1);
        assert_eq!(g.output_len(28, 4), Some(14));
        assert_eq!(g.output_len(7, 3), Some(4));
        assert_eq!(Conv2dGeometry::new(1, 0).output_len(2, 3), None);
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(x.conv2d(&w, g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn random_against_six_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = Conv2dGeometry::new(rng.random_range(1..3), rng.random_range(0..2));
            let (b, c, f) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(kh..8), rng.random_range(kw..8));
            let x = random(&[b, c, h, w], &mut rng);
            let k = random(&[f, c, kh, kw], &mut rng);
            let fast = x.conv2d(&k, g).unwrap();
            let slow = naive_conv(&x, &k, g);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() <= 1e-10 * (1.0 + e.abs()));
            }
        }
    }

    #[test]
    fn transpose_and_weight_maps_are_adjoints() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let g = Conv2dGeometry::new(rng.random_range(1..3), rng.random_range(0..2));
            let (b, c, f) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(kh..8), rng.random_range(kw..8));
            let x = random(&[b, c, h, w], &mut rng);
            let k = random(&[f, c, kh, kw], &mut rng);
            let y = random(x.conv2d(&k, g).unwrap().shape(), &mut rng);
            let lhs = x.conv2d(&k, g).unwrap().dot(&y).unwrap();
            let via_t = x.dot(&y.conv2d_transpose(&k, g, Some((h, w))).unwrap()).unwrap();
            let via_w = k.dot(&x.conv2d_weight(&y, g, (kh, kw)).unwrap()).unwrap();
            assert!((lhs - via_t).abs() <= 1e-8 * (1.0 + lhs.abs()));
            assert!((lhs - via_w).abs() <= 1e-8 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn transpose_default_size_inverts_stride_two() {
        let g = Conv2dGeometry::new(2, 1);
        let y = Tensor::<f64>::zeros(&[1, 4, 7, 7]);
        let w = Tensor::<f64>::zeros(&[4, 2, 4, 4]);
        assert_eq!(y.conv2d_transpose(&w, g, None).unwrap().shape(), &[1, 2, 14, 14]);
    }

    #[test]
    fn upsample_and_sum_pool_are_adjoints() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let x = random(&[2, 3, 3, 4], &mut rng);
        let up = x.upsample_nearest(2).unwrap();
        assert_eq!(up.shape(), &[2, 3, 6, 8]);
        assert_eq!(up.data()[0], up.data()[1]);
        let y = random(&[2, 3, 6, 8], &mut rng);
        let lhs = up.dot(&y).unwrap();
        let rhs = x.dot(&y.sum_pool(2).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!(up.avg_pool(2).unwrap().max_abs_diff(&x).unwrap(), 0.0);
    }
}
