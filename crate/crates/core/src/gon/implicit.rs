use super::{gon_loss, Decoder, GonConfig, GonOutput, LatentBatch};
use crate::autodiff::{Graph, Var};
use crate::data::{coord_grid, signals_to_images};
use crate::error::{Error, Result};
use crate::nn::{DecoderSpec, Mode, ParamSet, ParamSource};
use crate::scalar::Float;
use crate::tensor::Tensor;

pub type ImplicitOutput<'g, T> = GonOutput<'g, T>;

/// GON loss of a coordinate network. `signals` is `(B, P, m_out)`, sampled
/// at the shared `coords` `(P, n)` held by `dec`; both the latent integral
/// and the outer loss are means over the points.
pub fn implicit_loss<'g, T: Float, P: ParamSource<'g, T>>(
    dec: &Decoder<'_, 'g, T, P>,
    signals: Var<'g, T>,
    z0: Var<'g, T>,
    cfg: &GonConfig,
) -> Result<ImplicitOutput<'g, T>> {
    let coords = dec.coords.ok_or_else(|| Error::invalid("implicit loss needs coordinates"))?;
    let (s, c) = (signals.shape(), coords.shape());
    if s.len() != 3 || c.len() != 2 || s[1] != c[0] {
        return Err(Error::shape("implicit signals vs coordinates", &s, &c));
    }
    gon_loss(dec, signals, z0, cfg)
}

/// Loss and latents of a frozen coordinate network (parameters
/// `decoder.*`).
pub fn implicit_gon_loss<T: Float>(
    signals: &Tensor<T>,
    coords: &Tensor<T>,
    spec: &DecoderSpec,
    params: &ParamSet<T>,
    z0: &Tensor<T>,
    cfg: &GonConfig,
) -> Result<(T, LatentBatch<T>)> {
    let g = Graph::new();
    let b = params.bind(&g);
    let scope = b.scope("decoder");
    let mut dec = Decoder::new(spec, &scope, Mode::Eval);
    dec.coords = Some(g.leaf(coords.clone()));
    let out = implicit_loss(&dec, g.leaf(signals.clone()), g.leaf(z0.clone()), cfg)?;
    Ok((
        out.loss.value().item()?,
        LatentBatch {
            z: out.latent.tensor(),
            origin_sigma: cfg.origin_sigma,
        },
    ))
}

/// Renders latents `z` `(B, k)` on an `out_h × out_w` grid over the same
/// `[−1, 1]²` domain; returns `(B, m_out, out_h, out_w)` raw outputs.
pub fn super_resolve<T: Float>(spec: &DecoderSpec, params: &ParamSet<T>, z: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if !spec.is_implicit() || spec.coord_dim != 2 {
        return Err(Error::invalid("super-resolution needs a 2-D coordinate network"));
    }
    let grid = coord_grid::<T>(out_h, out_w)?;
    let g = Graph::new();
    let b = params.bind(&g);
    let scope = b.scope("decoder");
    let mut dec = Decoder::new(spec, &scope, Mode::Eval);
    dec.coords = Some(g.leaf(grid.coords));
    let out = g.no_grad(|| dec.run(g.leaf(z.clone())).map(|(o, _)| o.tensor()))?;
    signals_to_images(&out, out_h, out_w)
}
