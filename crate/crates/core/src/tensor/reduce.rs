use alloc::vec;
use alloc::vec::Vec;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl<T: Float> Tensor<T> {
    /// Reduces over `axes`, removing them from the shape.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::EmptyAxes { op: "reduce" });
        }
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::InvalidAxis { op: "reduce", axis: a, rank });
            }
            reduced[a] = true;
        }
        let count: usize = (0..rank).filter(|&d| reduced[d]).map(|d| self.shape()[d]).product();
        if count == 0 {
            return Err(Error::InvalidShape {
                op: "reduce",
                shape: self.shape().to_vec(),
                reason: "reduced extent is empty",
            });
        }
        let keep: Vec<usize> = (0..rank).map(|d| if reduced[d] { 1 } else { self.shape()[d] }).collect();
        let out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| self.shape()[d]).collect();
        let out = match op {
            ReduceOp::Sum => self.sum_to(&keep)?,
            ReduceOp::Mean => self.sum_to(&keep)?.scale(T::ONE / T::from_f64(count as f64)),
            ReduceOp::Max => self.max_to(&keep),
        };
        out.into_reshaped(&out_shape)
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    fn max_to(&self, keep: &[usize]) -> Self {
        let rank = self.rank();
        let out_strides = super::strides(keep);
        let in_strides = super::strides(self.shape());
        let mut out = vec![None::<T>; numel(keep)];
        for (flat, &v) in self.data().iter().enumerate() {
            let mut o = 0;
            for d in 0..rank {
                let c = (flat / in_strides[d]) % self.shape()[d];
                if keep[d] != 1 {
                    o += c * out_strides[d];
                }
            }
            out[o] = Some(match out[o] {
                Some(m) if m >= v => m,
                _ => v,
            });
        }
        Tensor::new(keep.to_vec(), out.into_iter().map(|v| v.unwrap_or(T::ZERO)).collect()).expect("keep shape matches output")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_reductions() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(x.reduce(ReduceOp::Sum, &[0]).unwrap().item().unwrap(), 6.0);
        assert_eq!(Tensor::<f64>::ones(&[4, 4]).reduce(ReduceOp::Mean, &[0, 1]).unwrap().item().unwrap(), 1.0);
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.reduce(ReduceOp::Sum, &[0]).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(m.reduce(ReduceOp::Max, &[1]).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_over_axis_matches_hand_loop() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 5], |i| (i as f64 * 0.37).sin());
        let r = x.reduce(ReduceOp::Sum, &[1]).unwrap();
        assert_eq!(r.shape(), &[3, 5]);
        for a in 0..3 {
            for c in 0..5 {
                let mut s = 0.0;
                for b in 0..4 {
                    s += x.data()[a * 20 + b * 5 + c];
                }
                assert!((r.data()[a * 5 + c] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::ones(&[2, 3]);
        assert_eq!(x.reduce(ReduceOp::Sum, &[]), Err(Error::EmptyAxes { op: "reduce" }));
        assert!(matches!(x.reduce(ReduceOp::Mean, &[2]), Err(Error::InvalidAxis { .. })));
        let empty = Tensor::<f64>::zeros(&[0, 3]);
        assert!(empty.reduce(ReduceOp::Mean, &[0]).is_err());
    }
}
