use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::tensor::{numel, Conv2dGeometry};

pub const DEFAULT_W0: f64 = 30.0;

fn default_w0() -> f64 {
    DEFAULT_W0
}

fn one() -> usize {
    1
}

/// One layer of a network. Shapes below are per example, without the
/// leading batch (and, for coordinate networks, point) axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// `[input] → [output]`, `y = xW + b` with `W: (input, output)`.
    Dense {
        input: usize,
        output: usize,
    },
    /// `[C,H,W] → [F,H',W']`, weight `(F, C, k, k)`.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// Adjoint of `Conv`; weight `(in_channels, out_channels, k, k)`.
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// Nearest-neighbour upsampling of the two spatial axes.
    Upsample {
        factor: usize,
    },
    /// Normalizes each feature (rank 1) or channel (rank 3).
    Batchnorm {
        features: usize,
    },
    Activation {
        kind: ActivationKind,
    },
    /// `[n] → [latent]` through mean and log-variance heads and `μ + σ⊙ε`.
    Reparameterize {
        latent: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn name(&self) -> String {
        match self {
            LayerSpec::Dense { input, output } => format!("dense {input}->{output}"),
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                format!("conv {in_channels}->{out_channels} k{kernel}")
            }
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                format!("conv_transpose {in_channels}->{out_channels} k{kernel}")
            }
            LayerSpec::Upsample { factor } => format!("upsample x{factor}"),
            LayerSpec::Batchnorm { features } => format!("batchnorm {features}"),
            LayerSpec::Activation { kind } => kind.to_string(),
            LayerSpec::Reparameterize { latent } => format!("reparameterize {latent}"),
            LayerSpec::Reshape { shape } => format!("reshape {shape:?}"),
        }
    }

    /// Per-example output shape for per-example input `s`.
    pub fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>> {
        let bad = |reason: &'static str| Error::InvalidShape {
            op: "layer",
            shape: s.to_vec(),
            reason,
        };
        match *self {
            LayerSpec::Dense { input, output } => {
                if s != [input] {
                    return Err(Error::shape("dense", s, &[input]));
                }
                Ok(vec![output])
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if s.len() != 3 || s[0] != in_channels {
                    return Err(Error::shape("conv", s, &[in_channels]));
                }
                let g = Conv2dGeometry::new(stride, padding);
                let h = g.output_len(s[1], kernel).ok_or_else(|| bad("kernel larger than padded input"))?;
                let w = g.output_len(s[2], kernel).ok_or_else(|| bad("kernel larger than padded input"))?;
                Ok(vec![out_channels, h, w])
            }
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if s.len() != 3 || s[0] != in_channels {
                    return Err(Error::shape("conv_transpose", s, &[in_channels]));
                }
                let g = Conv2dGeometry::new(stride, padding);
                let h = g.transpose_len(s[1], kernel).filter(|&n| n > 0).ok_or_else(|| bad("padding too large"))?;
                let w = g.transpose_len(s[2], kernel).filter(|&n| n > 0).ok_or_else(|| bad("padding too large"))?;
                Ok(vec![out_channels, h, w])
            }
            LayerSpec::Upsample { factor } => {
                if s.len() != 3 {
                    return Err(bad("upsample needs [C,H,W]"));
                }
                if factor == 0 {
                    return Err(bad("upsample factor must be positive"));
                }
                Ok(vec![s[0], s[1] * factor, s[2] * factor])
            }
            LayerSpec::Batchnorm { features } => {
                if (s.len() != 1 && s.len() != 3) || s[0] != features {
                    return Err(Error::shape("batchnorm", s, &[features]));
                }
                Ok(s.to_vec())
            }
            LayerSpec::Activation { .. } => Ok(s.to_vec()),
            LayerSpec::Reparameterize { latent } => {
                if s.len() != 1 || latent == 0 {
                    return Err(bad("reparameterize needs a flat input and latent >= 1"));
                }
                Ok(vec![latent])
            }
            LayerSpec::Reshape { ref shape } => {
                if numel(shape) != numel(s) || shape.is_empty() {
                    return Err(Error::shape("reshape", s, shape));
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Declarative description of a network `F`.
///
/// The network input per example is `latent_shape`, or for a coordinate
/// network (`coord_dim > 0`) the concatenation `c ⊕ z` of length
/// `coord_dim + k` evaluated at every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub latent_shape: Vec<usize>,
    #[serde(default)]
    pub coord_dim: usize,
    pub output_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Frequency of `sin` activations.
    #[serde(default = "default_w0")]
    pub w0: f64,
}

impl DecoderSpec {
    /// Latent dimension `k` (all latent elements).
    pub fn latent_dim(&self) -> usize {
        numel(&self.latent_shape)
    }

    pub fn is_implicit(&self) -> bool {
        self.coord_dim > 0
    }

    /// Per-example (per-point) network input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        if self.is_implicit() {
            vec![self.coord_dim + self.latent_dim()]
        } else {
            self.latent_shape.clone()
        }
    }

    /// Checks every invariant and returns the per-example output shape of
    /// each layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.latent_shape.is_empty() || self.latent_shape.contains(&0) {
            return Err(Error::invalid("latent shape must be non-empty with positive extents"));
        }
        if self.is_implicit() && self.latent_shape.len() != 1 {
            return Err(Error::invalid("coordinate networks take a flat latent"));
        }
        if !(self.w0.is_finite() && self.w0 > 0.0) {
            return Err(Error::invalid("w0 must be positive"));
        }
        let reparams = self.layers.iter().filter(|l| matches!(l, LayerSpec::Reparameterize { .. })).count();
        if reparams > 1 {
            return Err(Error::invalid("at most one reparameterize layer is permitted"));
        }
        let mut shape = self.input_shape();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| Error::Layer {
                index,
                layer: layer.name(),
                source: e.into(),
            })?;
            shapes.push(shape.clone());
        }
        if shape != self.output_shape {
            return Err(Error::shape("network output", &shape, &self.output_shape));
        }
        Ok(shapes)
    }

    pub fn reparameterize_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Reparameterize { .. }))
    }

    /// `(name, shape, trainable)` of every parameter, in initialization
    /// order. Names are `{prefix}.{layer}.{param}`.
    pub fn param_shapes(&self, prefix: &str) -> Result<Vec<(String, Vec<usize>, bool)>> {
        let shapes = self.validate()?;
        let mut out = Vec::new();
        let mut input = self.input_shape();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut add = |p: &str, s: Vec<usize>, t: bool| out.push((format!("{prefix}.{i}.{p}"), s, t));
            match *layer {
                LayerSpec::Dense { input, output } => {
                    add("weight", vec![input, output], true);
                    add("bias", vec![output], true);
                }
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    add("weight", vec![out_channels, in_channels, kernel, kernel], true);
                    add("bias", vec![out_channels, 1, 1], true);
                }
                LayerSpec::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    add("weight", vec![in_channels, out_channels, kernel, kernel], true);
                    add("bias", vec![out_channels, 1, 1], true);
                }
                LayerSpec::Batchnorm { features } => {
                    let s = if input.len() == 3 { vec![features, 1, 1] } else { vec![features] };
                    add("gamma", s.clone(), true);
                    add("beta", s.clone(), true);
                    add("running_mean", s.clone(), false);
                    add("running_var", s, false);
                }
                LayerSpec::Reparameterize { latent } => {
                    let n = input[0];
                    add("mu.weight", vec![n, latent], true);
                    add("mu.bias", vec![latent], true);
                    add("logvar.weight", vec![n, latent], true);
                    add("logvar.bias", vec![latent], true);
                }
                _ => {}
            }
            input = shapes[i].clone();
        }
        Ok(out)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes("")?.iter().filter(|p| p.2).map(|p| numel(&p.1)).sum())
    }

    /// Encoder whose layers mirror this decoder: the layer list reversed,
    /// weighted layers transposed, reshapes inverted and `upsample → conv`
    /// pairs folded into strided convolutions. Normalization/activation runs
    /// keep their internal order; the decoder's output run is dropped.
    pub fn mirror(&self) -> Result<DecoderSpec> {
        if self.is_implicit() || self.reparameterize_index().is_some() {
            return Err(Error::invalid("only plain decoders can be mirrored"));
        }
        let shapes = self.validate()?;
        enum Item {
            Weighted(LayerSpec),
            Post(Vec<LayerSpec>),
        }
        let mut items: Vec<Item> = Vec::new();
        let mut i = 0;
        while i < self.layers.len() {
            let layer = &self.layers[i];
            let input = if i == 0 { self.input_shape() } else { shapes[i - 1].clone() };
            let item = match *layer {
                LayerSpec::Dense { input, output } => Item::Weighted(LayerSpec::Dense { input: output, output: input }),
                LayerSpec::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Item::Weighted(LayerSpec::Conv {
                    in_channels: out_channels,
                    out_channels: in_channels,
                    kernel,
                    stride,
                    padding,
                }),
                LayerSpec::Upsample { factor } => match self.layers.get(i + 1) {
                    Some(&LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride: 1,
                        padding,
                    }) => {
                        i += 1;
                        Item::Weighted(LayerSpec::Conv {
                            in_channels: out_channels,
                            out_channels: in_channels,
                            kernel,
                            stride: factor,
                            padding,
                        })
                    }
                    _ => return Err(Error::invalid(format!("layer {i}: upsample must precede a stride-1 conv"))),
                },
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride: 1,
                    padding,
                } => Item::Weighted(LayerSpec::Conv {
                    in_channels: out_channels,
                    out_channels: in_channels,
                    kernel,
                    stride: 1,
                    padding,
                }),
                LayerSpec::Reshape { .. } => Item::Weighted(LayerSpec::Reshape { shape: input }),
                LayerSpec::Activation { .. } | LayerSpec::Batchnorm { .. } => match items.last_mut() {
                    Some(Item::Post(run)) => {
                        run.push(layer.clone());
                        i += 1;
                        continue;
                    }
                    _ => Item::Post(vec![layer.clone()]),
                },
                _ => return Err(Error::invalid(format!("layer {i} cannot be mirrored"))),
            };
            items.push(item);
            i += 1;
        }
        let mut layers = Vec::new();
        let mut seen_weighted = false;
        for item in items.into_iter().rev() {
            match item {
                Item::Weighted(l) => {
                    seen_weighted |= !matches!(l, LayerSpec::Reshape { .. });
                    layers.push(l);
                }
                Item::Post(run) if seen_weighted => layers.extend(run),
                Item::Post(_) => {}
            }
        }
        let enc = DecoderSpec {
            latent_shape: self.output_shape.clone(),
            coord_dim: 0,
            output_shape: self.latent_shape.clone(),
            layers,
            w0: self.w0,
        };
        enc.validate()?;
        Ok(enc)
    }

    /// Dense stack `k → hidden… → out` with `act` between layers and an
    /// optional output activation.
    pub fn mlp(k: usize, hidden: &[usize], output_shape: Vec<usize>, act: ActivationKind, out_act: Option<ActivationKind>) -> Self {
        let out = numel(&output_shape);
        let mut layers = Vec::new();
        let mut prev = k;
        for &h in hidden {
            layers.push(LayerSpec::Dense { input: prev, output: h });
            layers.push(LayerSpec::Activation { kind: act });
            prev = h;
        }
        layers.push(LayerSpec::Dense { input: prev, output: out });
        if let Some(kind) = out_act {
            layers.push(LayerSpec::Activation { kind });
        }
        if output_shape.len() != 1 {
            layers.push(LayerSpec::Reshape { shape: output_shape.clone() });
        }
        DecoderSpec {
            latent_shape: vec![k],
            coord_dim: 0,
            output_shape,
            layers,
            w0: DEFAULT_W0,
        }
    }

    /// Variational dense decoder: `k → hidden[0]` then a reparameterize layer
    /// back to `k`, followed by the `mlp` body.
    pub fn variational_mlp(k: usize, hidden: &[usize], output_shape: Vec<usize>, act: ActivationKind) -> Self {
        let body = DecoderSpec::mlp(k, hidden, output_shape, act, None);
        let mut layers = vec![
            LayerSpec::Dense {
                input: k,
                output: hidden.first().copied().unwrap_or(k),
            },
            LayerSpec::Activation { kind: act },
            LayerSpec::Reparameterize { latent: k },
        ];
        layers.extend(body.layers);
        DecoderSpec { layers, ..body }
    }

    /// SIREN over `coord_dim + k` inputs: `sin_layers` sine layers of width
    /// `hidden`, then a linear map to `out` channels.
    pub fn siren(coord_dim: usize, k: usize, hidden: usize, sin_layers: usize, out: usize, w0: f64) -> Self {
        let mut layers = Vec::new();
        let mut prev = coord_dim + k;
        for _ in 0..sin_layers {
            layers.push(LayerSpec::Dense { input: prev, output: hidden });
            layers.push(LayerSpec::Activation { kind: ActivationKind::Sin });
            prev = hidden;
        }
        layers.push(LayerSpec::Dense { input: prev, output: out });
        DecoderSpec {
            latent_shape: vec![k],
            coord_dim,
            output_shape: vec![out],
            layers,
            w0,
        }
    }

    /// Convolutional decoder from a `[k, base, base]` latent: `stages` blocks
    /// of `upsample ×2 → conv 3×3 → batchnorm → act`, then a 3×3 conv to
    /// `out_channels` and a sigmoid. Output side is `base·2^stages`.
    pub fn conv(k: usize, base: usize, filters: usize, stages: usize, out_channels: usize, act: ActivationKind) -> Self {
        let mut layers = Vec::new();
        let mut prev = k;
        for _ in 0..stages {
            layers.push(LayerSpec::Upsample { factor: 2 });
            layers.push(LayerSpec::Conv {
                in_channels: prev,
                out_channels: filters,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            layers.push(LayerSpec::Batchnorm { features: filters });
            layers.push(LayerSpec::Activation { kind: act });
            prev = filters;
        }
        layers.push(LayerSpec::Conv {
            in_channels: prev,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(LayerSpec::Activation { kind: ActivationKind::Sigmoid });
        let side = base << stages;
        DecoderSpec {
            latent_shape: vec![k, base, base],
            coord_dim: 0,
            output_shape: vec![out_channels, side, side],
            layers,
            w0: DEFAULT_W0,
        }
    }
}
