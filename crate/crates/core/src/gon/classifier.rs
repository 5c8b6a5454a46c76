use alloc::vec;

use super::{encode_latent, Decoder, GonConfig};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{forward, ActivationKind, DecoderSpec, ForwardCtx, Mode, ParamSet, ParamSource};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// One dense layer from the flattened latent to class logits; the softmax
/// lives in the loss.
pub fn classifier_head_spec(latent_dim: usize, classes: usize) -> DecoderSpec {
    DecoderSpec::mlp(latent_dim, &[], vec![classes], ActivationKind::Relu, None)
}

pub struct ClassifierOutput<'g, T: Float> {
    /// Mean cross-entropy.
    pub loss: Var<'g, T>,
    pub logits: Var<'g, T>,
    pub latent: Var<'g, T>,
    /// Examples whose arg-max logit equals the label.
    pub correct: usize,
}

/// Mean cross-entropy of `softmax(logits)` against `labels`.
pub fn cross_entropy<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Result<(Var<'g, T>, usize)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("cross_entropy", &s, &[labels.len()]));
    }
    let (b, c) = (s[0], s[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let g = logits.graph();
    let values = logits.value();
    let mut shift = Tensor::zeros(&[b, 1]);
    let mut onehot = Tensor::zeros(&[b, c]);
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &values.data()[i * c..(i + 1) * c];
        let (arg, max) = row.iter().enumerate().fold((0, row[0]), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        shift.data_mut()[i] = max;
        onehot.data_mut()[i * c + label] = T::ONE;
        correct += usize::from(arg == label);
    }
    // log-sum-exp is shift invariant, so the shift enters as a constant
    let shift = g.leaf(shift);
    let lse = logits.sub(shift)?.exp()?.sum_axes(&[1], true)?.ln()?.add(shift)?;
    let picked = logits.mul(g.leaf(onehot))?.sum_axes(&[1], true)?;
    Ok((lse.sub(picked)?.mean()?, correct))
}

/// Classifies the GON latent `−∇_{z₀} L(x, F(z₀))` with a head whose
/// parameters come from `head_params` (named as for `head_spec`).
pub fn classifier_loss<'g, T: Float, P: ParamSource<'g, T>, H: ParamSource<'g, T>>(
    dec: &Decoder<'_, 'g, T, P>,
    head_spec: &DecoderSpec,
    head_params: &H,
    x: Var<'g, T>,
    labels: &[usize],
    z0: Var<'g, T>,
    cfg: &GonConfig,
) -> Result<ClassifierOutput<'g, T>> {
    let z = encode_latent(dec, x, z0, cfg)?;
    let b = z.shape()[0];
    let flat = z.reshape(&[b, z.numel() / b])?;
    let mut ctx = ForwardCtx::new(dec.mode);
    let logits = forward(head_spec, head_params, flat, &mut ctx)?;
    let (loss, correct) = cross_entropy(logits, labels)?;
    Ok(ClassifierOutput {
        loss,
        logits,
        latent: z,
        correct,
    })
}

/// Cross-entropy of a frozen classifier GON; `params` holds `decoder.*`
/// and `head.*`.
pub fn classifier_gon_loss<T: Float>(
    x: &Tensor<T>,
    labels: &[usize],
    spec: &DecoderSpec,
    head_spec: &DecoderSpec,
    params: &ParamSet<T>,
    z0: &Tensor<T>,
    cfg: &GonConfig,
) -> Result<T> {
    let g = Graph::new();
    let b = params.bind(&g);
    let dscope = b.scope("decoder");
    let hscope = b.scope("head");
    let dec = Decoder::new(spec, &dscope, Mode::Eval);
    let out = classifier_loss(&dec, head_spec, &hscope, g.leaf(x.clone()), labels, g.leaf(z0.clone()), cfg)?;
    out.loss.value().item()
}
