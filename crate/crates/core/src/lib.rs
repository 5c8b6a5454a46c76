#![cfg_attr(not(test), no_std)]
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gon;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use scalar::{DType, Float};
pub use tensor::Tensor;
