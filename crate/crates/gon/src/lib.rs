//! File formats, experiment runner and command-line interface for gradient
//! origin networks built on `gon-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod idx;
pub mod image;
pub mod metrics;
pub mod raw;
pub mod runner;

pub use config::Config;
pub use error::{Error, Result};
