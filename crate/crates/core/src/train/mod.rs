//! Optimization, metrics and the per-variant training loop.

mod metrics;
mod model;
mod optim;
mod trainer;

pub use metrics::{bits_per_dim, kl_diag_gaussian, mean, median, psnr, summed_se};
pub use model::{InitKind, Model, ModelConfig, Variant};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use trainer::{BatchDiagnostics, Evaluation, MetricsHistory, MetricsRow, RngState, RunSettings, Trainer};

#[cfg(test)]
mod tests;
