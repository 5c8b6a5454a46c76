use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::metrics::{bits_per_dim, summed_se};
use super::model::{Model, Variant};
use super::optim::{adam_step, AdamConfig, OptimizerState};
use crate::autodiff::Graph;
use crate::data::{shuffled_indices, Dataset};
use crate::error::{Error, Result};
use crate::gon::{ae_loss, classifier_loss, gon_loss, origin, vgon_loss, Decoder, GloTable, TiedEncoder};
use crate::nn::{LayerSpec, Mode};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// RNG streams derived from the run seed.
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const GLO_SEED_OFFSET: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub origin_sigma: f64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// Stop once this many optimizer steps have been taken.
    pub max_steps: Option<u64>,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Reconstruction grid every this many epochs; 0 writes only the final one.
    pub grid_every: usize,
    /// Fraction of `epochs` after which the early-stopped checkpoint used for
    /// Gaussian-fit sampling is taken.
    pub early_stop_fraction: f64,
    /// Fill the `seconds` column; off makes metric files byte-reproducible.
    pub record_seconds: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            epochs: 20,
            batch_size: 64,
            seed: 0,
            origin_sigma: 0.0,
            eval_every: 1,
            max_steps: None,
            checkpoint_every: 0,
            grid_every: 0,
            early_stop_fraction: 0.1,
            record_seconds: true,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("batch_size and eval_every must be positive"));
        }
        if !(self.origin_sigma.is_finite() && self.origin_sigma >= 0.0) {
            return Err(Error::invalid("origin_sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.early_stop_fraction) {
            return Err(Error::invalid("early_stop_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Epoch of the early-stopped checkpoint, at least 1 when training at all.
    pub fn early_stop_epoch(&self) -> usize {
        if self.epochs == 0 {
            return 0;
        }
        (libm::ceil(self.epochs as f64 * self.early_stop_fraction) as usize).clamp(1, self.epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Summed squared error per validation image; cross-entropy for the
    /// classifier.
    pub val_loss: f64,
    pub elbo_bpd: Option<f64>,
    pub kl: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub rows: Vec<MetricsRow>,
}

impl MetricsHistory {
    /// Appends a row; epochs must increase and values be finite.
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::invalid(format!("metrics epoch {} after {}", row.epoch, last.epoch)));
            }
        }
        let values = [Some(row.train_loss), Some(row.val_loss), row.elbo_bpd, row.kl, row.seconds];
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("metrics row of epoch {}", row.epoch)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Validation metrics of one pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean over images of the summed squared reconstruction error.
    pub summed_se: f64,
    pub elbo_bpd: Option<f64>,
    pub kl: Option<f64>,
    pub cross_entropy: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Evaluation {
    pub fn val_loss(&self) -> f64 {
        self.cross_entropy.unwrap_or(self.summed_se)
    }
}

/// Statistics of the most recent training batch, kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDiagnostics {
    pub epoch: usize,
    pub step: u64,
    pub batch: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_mean: f64,
    pub loss: f64,
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

struct StepResult<T> {
    loss: f64,
    grads: Vec<(usize, Tensor<T>)>,
    latent_grad: Option<Tensor<T>>,
    bn_updates: Vec<(String, Tensor<T>)>,
    correct: Option<usize>,
}

/// Full training state of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T: Float> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    pub settings: RunSettings,
    /// Per-example latents of the GLO baseline.
    pub glo: Option<GloTable<T>>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: MetricsHistory,
    pub rng: ChaCha8Rng,
    pub last_batch: Option<BatchDiagnostics>,
}

fn batch_stats<T: Float>(x: &Tensor<T>) -> (f64, f64, f64) {
    let d = x.data();
    let min = d.iter().map(|v| v.to_f64()).fold(f64::INFINITY, f64::min);
    let max = d.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mean = d.iter().map(|v| v.to_f64()).sum::<f64>() / d.len().max(1) as f64;
    (min, max, mean)
}

/// Reparameterization noise `(b, k)` for a stochastic layer of width `k`.
fn draw_noise<T: Float>(dim: Option<usize>, b: usize, rng: &mut ChaCha8Rng) -> Option<Tensor<T>> {
    dim.map(|k| Tensor::from_fn(&[b, k], |_| T::from_f64(rng.sample::<f64, _>(StandardNormal))))
}

impl<T: Float> Trainer<T> {
    pub fn new(model: Model<T>, adam: AdamConfig, settings: RunSettings, train: &Dataset<T>) -> Result<Self> {
        adam.validate()?;
        settings.validate()?;
        if train.image_shape() != model.image_shape.as_slice() {
            return Err(Error::shape("training images", train.image_shape(), &model.image_shape));
        }
        if model.variant == Variant::Classifier && train.labels.is_none() {
            return Err(Error::invalid("classifier training needs labels"));
        }
        let glo = (model.variant == Variant::Glo).then(|| {
            GloTable::new(
                train.len(),
                model.latent_shape(),
                model.config.glo_init_sigma,
                settings.seed.wrapping_add(GLO_SEED_OFFSET),
            )
        });
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Trainer {
            optimizer: OptimizerState::new(&model.params, adam),
            model,
            settings,
            glo,
            epoch: 0,
            history: MetricsHistory::default(),
            rng,
            last_batch: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    fn has_batchnorm(&self) -> bool {
        let enc = self.model.encoder.iter().flat_map(|e| e.layers.iter());
        self.model.spec().layers.iter().chain(enc).any(|l| matches!(l, LayerSpec::Batchnorm { .. }))
    }

    fn eval_rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.settings.seed);
        r.set_stream(EVAL_STREAM);
        r
    }

    /// Loss of one batch and, with `want_grads`, gradients of every
    /// trainable parameter (plus GLO latent rows).
    #[allow(clippy::too_many_arguments)]
    fn objective(
        &self,
        x: &Tensor<T>,
        ids: &[usize],
        labels: Option<&[usize]>,
        mode: Mode,
        z0: Tensor<T>,
        noise: Option<Tensor<T>>,
        want_grads: bool,
    ) -> Result<StepResult<T>> {
        let model = &self.model;
        let spec = model.spec();
        let cfg = model.gon_config(self.settings.origin_sigma);
        let g = Graph::new();
        let bound = model.params.bind(&g);
        let dscope = bound.scope("decoder");
        let mut dec = Decoder::new(spec, &dscope, mode);
        if let Some(c) = model.coords()? {
            dec.coords = Some(g.leaf(c));
        }
        let xv = g.leaf(x.clone());
        let b = x.shape()[0];
        let mut latent = None;
        let mut correct = None;
        let (loss, bn_updates) = match model.variant {
            Variant::Gon | Variant::NStep { .. } | Variant::Implicit => {
                let o = gon_loss(&dec, xv, g.leaf(z0), &cfg)?;
                (o.loss, o.bn_updates)
            }
            Variant::Vgon => {
                dec.noise = noise.map(|n| g.leaf(n));
                let o = vgon_loss(&dec, xv, model.config.prior_var, model.config.likelihood)?;
                (o.loss, o.bn_updates)
            }
            Variant::Classifier => {
                let head = model.head.as_ref().ok_or_else(|| Error::invalid("classifier without head"))?;
                let labels = labels.ok_or_else(|| Error::invalid("classifier batch without labels"))?;
                let hscope = bound.scope("head");
                let o = classifier_loss(&dec, head, &hscope, xv, labels, g.leaf(z0), &cfg)?;
                correct = Some(o.correct);
                (o.loss, Vec::new())
            }
            Variant::Ae | Variant::TiedAe => {
                let enc_spec = model.encoder.as_ref().ok_or_else(|| Error::invalid("autoencoder without encoder"))?;
                let o = if let Some(map) = &model.tied_map {
                    let tied = TiedEncoder {
                        bound: &bound,
                        encoder: enc_spec,
                        map,
                    };
                    ae_loss(&Decoder::new(enc_spec, &tied, mode), &dec, xv, model.config.inner_loss)?
                } else {
                    let escope = bound.scope("encoder");
                    ae_loss(&Decoder::new(enc_spec, &escope, mode), &dec, xv, model.config.inner_loss)?
                };
                (o.loss, o.bn_updates)
            }
            Variant::Glo => {
                let table = self.glo.as_ref().ok_or_else(|| Error::invalid("GLO run without latent table"))?;
                let z = g.leaf(table.gather(ids)?);
                latent = Some(z);
                let (out, ctx) = dec.run(z)?;
                let loss = model.config.inner_loss.batch_sum(xv, out)?.scale(1.0 / b as f64)?;
                (loss, ctx.bn_updates)
            }
        };
        let value = loss.value().item()?.to_f64();
        let (mut grads, mut latent_grad) = (Vec::new(), None);
        if want_grads && value.is_finite() {
            let (idx, mut vars) = bound.trainable();
            vars.extend(latent);
            let mut all = g.grad(loss, &vars, false)?.tensors();
            if latent.is_some() {
                latent_grad = all.pop();
            }
            grads = idx.into_iter().zip(all).collect();
        }
        Ok(StepResult {
            loss: value,
            grads,
            latent_grad,
            bn_updates,
            correct,
        })
    }

    /// One optimizer step on the examples `ids` of `train`.
    pub fn train_batch(&mut self, train: &Dataset<T>, ids: &[usize]) -> Result<f64> {
        let x = self.model.targets(&train.batch(ids)?)?;
        let labels = match self.model.variant {
            Variant::Classifier => Some(train.labels_of(ids)?),
            _ => None,
        };
        let b = ids.len();
        let z0 = origin(b, self.model.latent_shape(), self.settings.origin_sigma, &mut self.rng);
        let noise = draw_noise(self.model.noise_dim(), b, &mut self.rng);
        let (x_min, x_max, x_mean) = batch_stats(&x);
        let r = self.objective(&x, ids, labels.as_deref(), Mode::Train, z0, noise, true)?;
        self.last_batch = Some(BatchDiagnostics {
            epoch: self.epoch + 1,
            step: self.optimizer.step + 1,
            batch: b,
            x_min,
            x_max,
            x_mean,
            loss: r.loss,
        });
        if !r.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {} step {}",
                self.epoch + 1,
                self.optimizer.step + 1
            )));
        }
        adam_step(&mut self.model.params, &r.grads, &mut self.optimizer)?;
        if let (Some(table), Some(grad)) = (self.glo.as_mut(), r.latent_grad) {
            let c = self.optimizer.config;
            table.update(ids, &grad, c.lr, c.beta1, c.beta2, c.eps)?;
        }
        for (name, value) in r.bn_updates {
            self.model.params.set(&name, value)?;
        }
        Ok(r.loss)
    }

    fn step_budget_left(&self) -> bool {
        self.settings.max_steps.is_none_or(|m| self.optimizer.step < m)
    }

    /// Trains one epoch over a fresh shuffle; returns the example-weighted
    /// mean training loss, or `None` when no step was taken.
    pub fn train_epoch(&mut self, train: &Dataset<T>) -> Result<Option<f64>> {
        let order = shuffled_indices(train.len(), &mut self.rng);
        let min_batch = if self.has_batchnorm() { 2 } else { 1 };
        let (mut total, mut count) = (0.0, 0usize);
        for ids in order.chunks(self.settings.batch_size) {
            if !self.step_budget_left() {
                break;
            }
            if ids.len() < min_batch {
                continue;
            }
            total += self.train_batch(train, ids)? * ids.len() as f64;
            count += ids.len();
        }
        self.epoch += 1;
        Ok((count > 0).then(|| total / count as f64))
    }

    /// Training objective over `train` in eval mode without updates.
    pub fn train_objective(&self, train: &Dataset<T>) -> Result<f64> {
        let mut rng = self.eval_rng();
        let (mut total, mut count) = (0.0, 0usize);
        let ids: Vec<usize> = (0..train.len()).collect();
        for chunk in ids.chunks(self.settings.batch_size) {
            let x = self.model.targets(&train.batch(chunk)?)?;
            let labels = match self.model.variant {
                Variant::Classifier => Some(train.labels_of(chunk)?),
                _ => None,
            };
            let z0 = origin(chunk.len(), self.model.latent_shape(), 0.0, &mut rng);
            let noise = draw_noise(self.model.noise_dim(), chunk.len(), &mut rng);
            let r = self.objective(&x, chunk, labels.as_deref(), Mode::Eval, z0, noise, false)?;
            total += r.loss * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(total / count.max(1) as f64)
    }

    /// Eval-mode metrics on `data`. Deterministic: the variational noise is
    /// redrawn from the same seed at every call.
    pub fn evaluate(&self, data: &Dataset<T>) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::invalid("evaluation set is empty"));
        }
        let mut rng = self.eval_rng();
        let seed = self.settings.seed.wrapping_add(GLO_SEED_OFFSET);
        let pixels = self.model.image_shape.iter().product::<usize>();
        let (mut se, mut elbo, mut kl, mut ce, mut correct) = (0.0, 0.0, 0.0, 0.0, 0usize);
        let ids: Vec<usize> = (0..data.len()).collect();
        for chunk in ids.chunks(self.settings.batch_size) {
            let images = data.batch(chunk)?;
            let b = chunk.len() as f64;
            match self.model.variant {
                Variant::Classifier => {
                    let x = self.model.targets(&images)?;
                    let labels = data.labels_of(chunk)?;
                    let z0 = origin(chunk.len(), self.model.latent_shape(), 0.0, &mut rng);
                    let r = self.objective(&x, chunk, Some(&labels), Mode::Eval, z0, None, false)?;
                    ce += r.loss * b;
                    correct += r.correct.unwrap_or(0);
                }
                Variant::Vgon => {
                    let x = self.model.targets(&images)?;
                    let recon = self.model.reconstruct(&images, &self.optimizer.config, seed)?;
                    se += summed_se(&images, &recon)?.iter().sum::<f64>();
                    let eps = draw_noise(self.model.noise_dim(), chunk.len(), &mut rng).unwrap_or_else(|| Tensor::zeros(&[0]));
                    let (rll, k, _, _) = self.model.vgon_stats(&x, &eps)?;
                    elbo += (rll - k) * b;
                    kl += k * b;
                }
                _ => {
                    let recon = self.model.reconstruct(&images, &self.optimizer.config, seed)?;
                    se += summed_se(&images, &recon)?.iter().sum::<f64>();
                }
            }
        }
        let n = data.len() as f64;
        let (elbo_bpd, kl, cross_entropy, accuracy) = match self.model.variant {
            Variant::Vgon => (Some(bits_per_dim(elbo / n, pixels)?), Some(kl / n), None, None),
            Variant::Classifier => (None, None, Some(ce / n), Some(correct as f64 / n)),
            _ => (None, None, None, None),
        };
        Ok(Evaluation {
            summed_se: se / n,
            elbo_bpd,
            kl,
            cross_entropy,
            accuracy,
        })
    }

    /// Row of epoch 0: the training objective and validation metrics of the
    /// freshly initialized model.
    pub fn initial_row(&self, train: &Dataset<T>, val: &Dataset<T>) -> Result<MetricsRow> {
        let e = self.evaluate(val)?;
        Ok(MetricsRow {
            epoch: 0,
            train_loss: self.train_objective(train)?,
            val_loss: e.val_loss(),
            elbo_bpd: e.elbo_bpd,
            kl: e.kl,
            seconds: None,
        })
    }

    /// Whether the epoch just completed is evaluated.
    pub fn eval_due(&self) -> bool {
        self.epoch.is_multiple_of(self.settings.eval_every) || self.epoch == self.settings.epochs || !self.step_budget_left()
    }

    /// Trains one epoch and, when due, evaluates it.
    pub fn run_epoch(&mut self, train: &Dataset<T>, val: &Dataset<T>) -> Result<Option<MetricsRow>> {
        let loss = self.train_epoch(train)?;
        if !self.eval_due() {
            return Ok(None);
        }
        let train_loss = match loss {
            Some(l) => l,
            None => self.train_objective(train)?,
        };
        let e = self.evaluate(val)?;
        Ok(Some(MetricsRow {
            epoch: self.epoch,
            train_loss,
            val_loss: e.val_loss(),
            elbo_bpd: e.elbo_bpd,
            kl: e.kl,
            seconds: None,
        }))
    }

    /// Runs every remaining epoch, appending rows to the history; the
    /// initial row is added first when the history is empty.
    pub fn fit(&mut self, train: &Dataset<T>, val: &Dataset<T>) -> Result<&MetricsHistory> {
        if self.history.rows.is_empty() {
            let row = self.initial_row(train, val)?;
            self.history.push(row)?;
        }
        while self.epoch < self.settings.epochs && self.step_budget_left() {
            if let Some(row) = self.run_epoch(train, val)? {
                self.history.push(row)?;
            }
        }
        Ok(&self.history)
    }

    /// Eval-mode summed-SE reconstructions of `data`, `(N, C, H, W)`.
    pub fn reconstruct(&self, data: &Dataset<T>) -> Result<Tensor<T>> {
        let seed = self.settings.seed.wrapping_add(GLO_SEED_OFFSET);
        let ids: Vec<usize> = (0..data.len()).collect();
        let mut parts = Vec::new();
        for chunk in ids.chunks(self.settings.batch_size) {
            parts.push(self.model.reconstruct(&data.batch(chunk)?, &self.optimizer.config, seed)?);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat(&refs, 0)
    }

    /// Latent codes of `data`, `(N, …latent_shape)`.
    pub fn latents(&self, data: &Dataset<T>) -> Result<Tensor<T>> {
        let seed = self.settings.seed.wrapping_add(GLO_SEED_OFFSET);
        let ids: Vec<usize> = (0..data.len()).collect();
        let mut parts = Vec::new();
        for chunk in ids.chunks(self.settings.batch_size) {
            parts.push(self.model.encode(&data.batch(chunk)?, &self.optimizer.config, seed)?);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat(&refs, 0)
    }
}
