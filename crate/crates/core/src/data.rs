//! In-memory datasets, coordinate grids and a synthetic corpus.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images `(N, C, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
}

impl<T: Float> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Option<Vec<usize>>, split: Split) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::InvalidShape {
                op: "dataset",
                shape: images.shape().to_vec(),
                reason: "images must be (N, C, H, W)",
            });
        }
        if let Some(v) = images.data().iter().find(|v| !(**v >= T::ZERO && **v <= T::ONE)) {
            return Err(Error::Domain {
                op: "dataset pixel",
                value: v.to_f64(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != images.shape()[0] {
                return Err(Error::invalid("label count differs from image count"));
            }
        }
        Ok(Dataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Examples at `ids`, in that order.
    pub fn batch(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.images.select_first(ids)
    }

    pub fn labels_of(&self, ids: &[usize]) -> Result<Vec<usize>> {
        let l = self.labels.as_ref().ok_or_else(|| Error::invalid("dataset has no labels"))?;
        ids.iter()
            .map(|&i| l.get(i).copied().ok_or_else(|| Error::invalid("example index out of range")))
            .collect()
    }

    /// First `n` examples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let ids: Vec<usize> = (0..n.min(self.len())).collect();
        Ok(Dataset {
            images: self.batch(&ids)?,
            labels: self.labels.as_ref().map(|l| l[..ids.len()].to_vec()),
            split: self.split,
        })
    }
}

/// Pixel-centre coordinates of an `h × w` image, row-major, `(y, x)` per
/// point, each axis `linspace(−1, 1)` with endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid<T> {
    pub coords: Tensor<T>,
    pub h: usize,
    pub w: usize,
}

fn linspace(n: usize, i: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

pub fn coord_grid<T: Float>(h: usize, w: usize) -> Result<CoordGrid<T>> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("coordinate grid needs h, w >= 1"));
    }
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            data.push(T::from_f64(linspace(h, i)));
            data.push(T::from_f64(linspace(w, j)));
        }
    }
    Ok(CoordGrid {
        coords: Tensor::new(vec![h * w, 2], data)?,
        h,
        w,
    })
}

/// `(B, C, H, W) → (B, H·W, C)`.
pub fn images_to_signals<T: Float>(images: &Tensor<T>) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            op: "images_to_signals",
            shape: s.to_vec(),
            reason: "expected (B, C, H, W)",
        });
    }
    let (b, c, p) = (s[0], s[1], s[2] * s[3]);
    let d = images.data();
    let out = Tensor::from_fn(&[b, p, c], |i| {
        let (bi, rest) = (i / (p * c), i % (p * c));
        let (pi, ci) = (rest / c, rest % c);
        d[(bi * c + ci) * p + pi]
    });
    Ok(out)
}

/// `(B, H·W, C) → (B, C, H, W)`.
pub fn signals_to_images<T: Float>(signals: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = signals.shape();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::InvalidShape {
            op: "signals_to_images",
            shape: s.to_vec(),
            reason: "expected (B, H·W, C)",
        });
    }
    let (b, p, c) = (s[0], s[1], s[2]);
    let d = signals.data();
    Ok(Tensor::from_fn(&[b, c, h, w], |i| {
        let (bi, rest) = (i / (c * p), i % (c * p));
        let (ci, pi) = (rest / p, rest % p);
        d[(bi * p + pi) * c + ci]
    }))
}

/// Class means sit at `0.125 + 0.75·e_c` (pairwise distance `0.75·√2`);
/// samples add `N(0, 0.05²)` noise and are clamped to `[0, 1]`. Examples
/// cycle through the classes. Shape `(N, 1, 1, dim)`.
pub fn synthetic_blobs<T: Float>(num_classes: usize, per_class: usize, dim: usize, seed: u64) -> Result<Dataset<T>> {
    if num_classes == 0 || per_class == 0 || dim < num_classes {
        return Err(Error::invalid("synthetic blobs need 1 <= num_classes <= dim and per_class >= 1"));
    }
    let n = num_classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        labels.push(c);
        for d in 0..dim {
            let mean = if d == c { 0.875 } else { 0.125 };
            let v: f64 = mean + 0.05 * rng.sample::<f64, _>(StandardNormal);
            data.push(T::from_f64(v.clamp(0.0, 1.0)));
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, 1, dim], data)?, Some(labels), Split::Train)
}

/// Fisher–Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    ids
}
