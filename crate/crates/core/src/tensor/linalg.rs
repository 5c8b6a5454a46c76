use alloc::vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Float;

impl<T: Float> Tensor<T> {
    /// Matrix product `(M×K)·(K×N)`, or the batched form `(B×M×K)·(K×N)`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if rhs.rank() != 2 || !(self.rank() == 2 || self.rank() == 3) {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let k = self.shape()[self.rank() - 1];
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let rows: usize = self.shape()[..self.rank() - 1].iter().product();
        let mut out = vec![T::ZERO; rows * n];
        T::gemm(rows, k, n, self.data(), rhs.data(), &mut out);
        let mut shape = self.shape()[..self.rank() - 1].to_vec();
        shape.push(n);
        Tensor::new(shape, out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: self.shape().to_vec(),
                reason: "expected rank 2",
            });
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::<f64>::from_fn(&[3, 3], |i| i as f64 - 4.0);
        assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn random_against_triple_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            let fast = a.matmul(&b).unwrap();
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }
        let a = random(&[7, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap() <= 1e-12);
    }

    #[test]
    fn batched_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = random(&[3, 4, 5], &mut rng);
        let b = random(&[5, 2], &mut rng);
        let r = a.matmul(&b).unwrap();
        assert_eq!(r.shape(), &[3, 4, 2]);
        for i in 0..3 {
            let expect = naive(&a.index_first(i).unwrap(), &b);
            let got = r.index_first(i).unwrap();
            assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);
        }
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn transpose_twice() {
        let a = Tensor::<f64>::from_fn(&[2, 5], |i| i as f64);
        let t: Vec<f64> = a.transpose().unwrap().data().to_vec();
        assert_eq!(t[..3], [0.0, 5.0, 1.0]);
        assert_eq!(a.transpose().unwrap().transpose().unwrap(), a);
    }
}
