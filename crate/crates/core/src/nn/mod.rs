//! Network building blocks: activations, declarative layer stacks,
//! parameter sets and the forward pass.

mod activation;
mod forward;
mod params;
mod spec;

pub use activation::{activation, ActivationKind, LEAKY_SLOPE};
pub use forward::{batchnorm, forward, forward_from, reparameterize, ForwardCtx, Mode, BN_EPS, BN_MOMENTUM};
pub use params::{siren_init, Bound, InitScheme, Param, ParamSet, ParamSource, Scope};
pub use spec::{DecoderSpec, LayerSpec, DEFAULT_W0};
