//! Floating-point element types.
//!
//! Every tensor operation is generic over [`Float`], implemented for `f32`
//! (training) and `f64` (verification). Transcendental functions come from
//! the platform math library with the `std` feature and from `libm`
//! without it; results are bit-reproducible on a given host either way.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Runtime tag for the element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

pub trait Float:
    Copy
    + Default
    + PartialEq
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, p: Self) -> Self;
    fn abs(self) -> Self;
    fn ln_1p(self) -> Self;
    fn is_finite(self) -> bool;

    /// Little-endian byte encoding, used by checkpoints and raw imports.
    fn write_le(self, out: &mut alloc::vec::Vec<u8>);
    /// Decodes one element from exactly `size_of::<Self>()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = a · b` for row-major `a` (m×k) and `b` (k×n). `c` is overwritten.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn sigmoid(self) -> Self {
        if self >= Self::ZERO {
            Self::ONE / (Self::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::ONE + e)
        }
    }

    /// `ln(1 + e^x)` without overflow.
    fn softplus(self) -> Self {
        self.max(Self::ZERO) + (-self.abs()).exp().ln_1p()
    }
}

/// Platform routine with `std`, `libm` otherwise.
macro_rules! math {
    ($t:ty, $std:ident, $libm:ident, $($arg:expr),+) => {{
        #[cfg(feature = "std")]
        {
            <$t>::$std($($arg),+)
        }
        #[cfg(not(feature = "std"))]
        {
            libm::$libm($($arg),+)
        }
    }};
}

macro_rules! impl_float {
    ($t:ty, $dtype:ident, $libm:ident, $gemm:ident,
     $exp:ident, $ln:ident, $sin:ident, $cos:ident, $sqrt:ident, $tanh:ident,
     $pow:ident, $fabs:ident, $log1p:ident) => {
        impl Float for $t {
            const DTYPE: DType = DType::$dtype;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                math!($t, exp, $exp, self)
            }
            #[inline]
            fn ln(self) -> Self {
                math!($t, ln, $ln, self)
            }
            #[inline]
            fn sin(self) -> Self {
                math!($t, sin, $sin, self)
            }
            #[inline]
            fn cos(self) -> Self {
                math!($t, cos, $cos, self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                math!($t, sqrt, $sqrt, self)
            }
            #[inline]
            fn tanh(self) -> Self {
                math!($t, tanh, $tanh, self)
            }
            #[inline]
            fn powf(self, p: Self) -> Self {
                math!($t, powf, $pow, self, p)
            }
            #[inline]
            fn abs(self) -> Self {
                math!($t, abs, $fabs, self)
            }
            #[inline]
            fn ln_1p(self) -> Self {
                math!($t, ln_1p, $log1p, self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn write_le(self, out: &mut alloc::vec::Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; core::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                // SAFETY: slice lengths are checked above; strides describe
                // dense row-major matrices inside those slices.
                unsafe {
                    matrixmultiply::$gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_float!(f32, F32, libm, sgemm, expf, logf, sinf, cosf, sqrtf, tanhf, powf, fabsf, log1pf);
impl_float!(f64, F64, libm, dgemm, exp, log, sin, cos, sqrt, tanh, pow, fabs, log1p);
