//! Experiment driver: training runs and the renders built on their
//! checkpoints. Everything runs in `f32`.
//!
//! A training run writes into its output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.json` | effective config |
//! | `metrics.csv` | one row per evaluated epoch, rewritten after each |
//! | `checkpoint.bin` | latest state (every `checkpoint_every` epochs and at the end) |
//! | `checkpoint-epoch<E>.bin` | periodic snapshots |
//! | `early.bin` | state after the early-stopping epoch |
//! | `recon-epoch<E>.png`, `recon.png` | validation originals next to reconstructions |
//! | `diagnostic.json` | last batch statistics when the loss turns non-finite |

use std::path::{Path, PathBuf};
use std::time::Instant;

use gon_core::data::Dataset;
use gon_core::gon::{fit_latent_gaussian, sample_latents, slerp};
use gon_core::nn::{ActivationKind, LayerSpec};
use gon_core::train::{MetricsHistory, Model, Trainer, Variant};
use gon_core::verify::{gradcheck_suite, CheckReport};
use gon_core::Tensor;
use serde::Serialize;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::save_image_grid;
use crate::metrics::write_csv;

pub const METRICS_CSV: &str = "metrics.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EARLY_CHECKPOINT: &str = "early.bin";
pub const DIAGNOSTIC: &str = "diagnostic.json";

/// Validation images shown in reconstruction grids.
const GRID_IMAGES: usize = 16;
/// Pairs per grid row in reconstruction grids.
const GRID_PAIRS_PER_ROW: usize = 4;

type F = f32;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub history: MetricsHistory,
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    error: String,
    epoch: usize,
    step: u64,
    last_batch: &'a Option<gon_core::train::BatchDiagnostics>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Originals and reconstructions of the first validation images,
/// interleaved so each original sits left of its reconstruction.
pub fn save_recon_grid(trainer: &Trainer<F>, val: &Dataset<F>, path: &Path) -> Result<()> {
    let subset = val.take(GRID_IMAGES)?;
    let recon = trainer.reconstruct(&subset)?;
    save_pairs(&subset.images, &recon, path)
}

fn save_pairs(left: &Tensor<F>, right: &Tensor<F>, path: &Path) -> Result<()> {
    let n = left.shape()[0];
    let mut parts = Vec::with_capacity(2 * n);
    for i in 0..n {
        parts.push(left.index_first(i)?);
        parts.push(right.index_first(i)?);
    }
    let refs: Vec<&Tensor<F>> = parts.iter().collect();
    let mut shape = vec![2 * n];
    shape.extend_from_slice(&left.shape()[1..]);
    let tiles = Tensor::concat(&refs, 0)?.into_reshaped(&shape)?;
    save_image_grid(&tiles, 2 * GRID_PAIRS_PER_ROW, path)?;
    Ok(())
}

fn budget_spent(t: &Trainer<F>) -> bool {
    t.settings.max_steps.is_some_and(|m| t.step() >= m)
}

/// Trains `trainer` to `settings.epochs`, writing every artifact.
/// `elapsed` is the wall-clock time already spent, for resumed runs.
fn drive(mut trainer: Trainer<F>, cfg: &Config, train: &Dataset<F>, val: &Dataset<F>, elapsed: f64) -> Result<RunOutput> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let start = Instant::now();
    let record = trainer.settings.record_seconds;
    let seconds = |s: &Instant| record.then(|| elapsed + s.elapsed().as_secs_f64());
    let csv = dir.join(METRICS_CSV);
    let fail = |t: &Trainer<F>, e: Error| -> Error {
        let d = Diagnostic {
            error: e.to_string(),
            epoch: t.epoch,
            step: t.step(),
            last_batch: &t.last_batch,
        };
        let text = serde_json::to_string_pretty(&d).expect("diagnostic serializes");
        match write_atomic(&dir.join(DIAGNOSTIC), text.as_bytes()) {
            Ok(()) => e,
            Err(w) => Error::Checkpoint(format!("{e}; writing the diagnostic also failed: {w}")),
        }
    };
    if trainer.history.rows.is_empty() {
        let mut row = trainer.initial_row(train, val).map_err(|e| fail(&trainer, e.into()))?;
        row.seconds = seconds(&start);
        trainer.history.push(row)?;
        write_csv(&trainer.history, &csv)?;
    }
    let settings = trainer.settings.clone();
    let early = settings.early_stop_epoch();
    while trainer.epoch < settings.epochs && !budget_spent(&trainer) {
        let row = trainer.run_epoch(train, val).map_err(|e| fail(&trainer, e.into()))?;
        if let Some(mut row) = row {
            row.seconds = seconds(&start);
            trainer.history.push(row)?;
            write_csv(&trainer.history, &csv)?;
        }
        let e = trainer.epoch;
        let snapshot = || Checkpoint::capture(&trainer, cfg, seconds(&start));
        if e == early {
            snapshot().save(&dir.join(EARLY_CHECKPOINT))?;
        }
        if settings.checkpoint_every > 0 && e.is_multiple_of(settings.checkpoint_every) {
            let c = snapshot();
            c.save(&dir.join(format!("checkpoint-epoch{e:04}.bin")))?;
            c.save(&dir.join(CHECKPOINT))?;
        }
        if settings.grid_every > 0 && e.is_multiple_of(settings.grid_every) {
            save_recon_grid(&trainer, val, &dir.join(format!("recon-epoch{e:04}.png")))?;
        }
    }
    Checkpoint::capture(&trainer, cfg, seconds(&start)).save(&dir.join(CHECKPOINT))?;
    save_recon_grid(&trainer, val, &dir.join("recon.png"))?;
    Ok(RunOutput { dir, history: trainer.history })
}

/// Fresh training run described by `cfg`.
pub fn train(cfg: &Config) -> Result<RunOutput> {
    cfg.dump(&cfg.output_dir)?;
    let (train, val) = cfg.dataset.load::<F>()?;
    let model = Model::new(cfg.model.clone(), cfg.variant, train.image_shape(), cfg.run.seed)?;
    let trainer = Trainer::new(model, cfg.optimizer, cfg.run.clone(), &train)?;
    drive(trainer, cfg, &train, &val, 0.0)
}

/// Continues the run saved in `checkpoint` up to `cfg.run.epochs`. The
/// model, variant, optimizer and seed must match the checkpoint.
pub fn resume(cfg: &Config, checkpoint: &Path) -> Result<RunOutput> {
    cfg.dump(&cfg.output_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let stored = &ckpt.meta.config;
    if stored.model != cfg.model || stored.variant != cfg.variant || stored.optimizer != cfg.optimizer || stored.run.seed != cfg.run.seed {
        return Err(Error::Config(format!(
            "{} was trained with a different model, variant, optimizer or seed",
            checkpoint.display()
        )));
    }
    let mut trainer = ckpt.restore::<F>()?;
    trainer.settings = cfg.run.clone();
    let (train, val) = cfg.dataset.load::<F>()?;
    drive(trainer, cfg, &train, &val, ckpt.meta.elapsed_seconds.unwrap_or(0.0))
}

/// Trainer stored in `path`, for rendering.
pub fn load_trainer(path: &Path) -> Result<Trainer<F>> {
    Checkpoint::load(path)?.restore()
}

/// Originals next to reconstructions for the first `count` validation
/// images; writes `reconstruct.png`.
pub fn reconstruct(cfg: &Config, checkpoint: &Path, count: usize) -> Result<PathBuf> {
    let t = load_trainer(checkpoint)?;
    let (_, val) = cfg.dataset.load::<F>()?;
    let subset = val.take(count)?;
    let recon = t.reconstruct(&subset)?;
    let path = cfg.output_dir.join("reconstruct.png");
    save_pairs(&subset.images, &recon, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Prior draws for the variational variant, Gaussian fit otherwise.
    Auto,
    /// `z ~ N(0, I)`; variational variant only.
    Prior,
    /// A diagonal Gaussian fitted to the training latents of the
    /// early-stopped model (the final one when no early checkpoint exists).
    Fit,
}

/// Decoded latent samples; writes `samples.png`.
pub fn sample(cfg: &Config, checkpoint: &Path, count: usize, mode: SampleMode, seed: u64) -> Result<PathBuf> {
    let mode = match mode {
        SampleMode::Auto if cfg.variant == Variant::Vgon => SampleMode::Prior,
        SampleMode::Auto => SampleMode::Fit,
        m => m,
    };
    let images = match mode {
        SampleMode::Prior => load_trainer(checkpoint)?.model.sample_prior(count, seed)?,
        _ => {
            let early = checkpoint.with_file_name(EARLY_CHECKPOINT);
            let t = load_trainer(if early.exists() { &early } else { checkpoint })?;
            let (train, _) = cfg.dataset.load::<F>()?;
            gaussian_fit_samples(&t, &train, count, seed)?
        }
    };
    let path = cfg.output_dir.join("samples.png");
    save_image_grid(&images, grid_cols(count), &path)?;
    Ok(path)
}

/// Images decoded from `count` draws of a diagonal Gaussian fitted to the
/// latents of `data`.
pub fn gaussian_fit_samples(t: &Trainer<F>, data: &Dataset<F>, count: usize, seed: u64) -> Result<Tensor<F>> {
    let z = flat(&t.latents(data)?)?;
    let fit = fit_latent_gaussian(&z)?;
    let draws = sample_latents(&fit.mu, &fit.sigma, count, seed)?;
    let mut shape = vec![count];
    shape.extend_from_slice(&latent_code_shape(t));
    t.model.decode(&draws.into_reshaped(&shape)?).map_err(Into::into)
}

fn latent_code_shape(t: &Trainer<F>) -> Vec<usize> {
    match t.model.noise_dim() {
        Some(k) => vec![k],
        None => t.model.latent_shape().to_vec(),
    }
}

fn flat(z: &Tensor<F>) -> Result<Tensor<F>> {
    let n = z.shape()[0];
    Ok(z.reshape(&[n, z.numel() / n.max(1)])?)
}

fn grid_cols(count: usize) -> usize {
    (count as f64).sqrt().ceil().max(1.0) as usize
}

/// Spherical interpolations between validation pairs `(2i, 2i+1)`, one
/// row per pair; writes `interpolate.png`.
pub fn interpolate(cfg: &Config, checkpoint: &Path, pairs: usize, steps: usize) -> Result<PathBuf> {
    if steps < 2 || pairs == 0 {
        return Err(Error::Config("interpolation needs at least one pair and two steps".into()));
    }
    let t = load_trainer(checkpoint)?;
    let (_, val) = cfg.dataset.load::<F>()?;
    let subset = val.take(2 * pairs)?;
    if subset.len() < 2 * pairs {
        return Err(Error::Config(format!("{} validation images cannot form {pairs} pairs", subset.len())));
    }
    let z = t.latents(&subset)?;
    let code = z.shape()[1..].to_vec();
    let zf = flat(&z)?;
    let mut data = Vec::with_capacity(pairs * steps * zf.shape()[1]);
    for p in 0..pairs {
        let (a, b) = (zf.index_first(2 * p)?, zf.index_first(2 * p + 1)?);
        for s in 0..steps {
            data.extend_from_slice(slerp(&a, &b, s as f64 / (steps - 1) as f64)?.data());
        }
    }
    let mut shape = vec![pairs * steps];
    shape.extend_from_slice(&code);
    let path_z = Tensor::new(shape, data)?;
    let images = t.model.decode(&path_z)?;
    let path = cfg.output_dir.join("interpolate.png");
    save_image_grid(&images, steps, &path)?;
    Ok(path)
}

/// Implicit-variant renders at `scale ×` the training resolution. Writes
/// `superres.png` (the first validation image alone) and
/// `superres-grid.png` (the first `count`).
pub fn superres(cfg: &Config, checkpoint: &Path, scale: usize, count: usize) -> Result<PathBuf> {
    let t = load_trainer(checkpoint)?;
    if t.model.variant != Variant::Implicit {
        return Err(Error::Config("superres needs an implicit-variant checkpoint".into()));
    }
    if scale == 0 || count == 0 {
        return Err(Error::Config("scale and count must be positive".into()));
    }
    let (_, val) = cfg.dataset.load::<F>()?;
    let subset = val.take(count)?;
    let z = t.latents(&subset)?;
    let (h, w) = (t.model.image_shape[1] * scale, t.model.image_shape[2] * scale);
    let images = gon_core::gon::super_resolve(t.model.spec(), &t.model.params, &z, h, w)?;
    let images = t.model.config.to_data(t.model.variant, &images);
    let path = cfg.output_dir.join("superres.png");
    save_image_grid(&images.select_first(&[0])?, 1, &path)?;
    save_image_grid(&images, grid_cols(subset.len()), &cfg.output_dir.join("superres-grid.png"))?;
    Ok(path)
}

/// Per-dimension moments and histograms of the latents of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentReport {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Per dimension: `(lo, hi, count)` for equal-width bins over the range.
    pub histogram: Vec<Vec<(f64, f64, usize)>>,
}

pub fn latent_report(z: &Tensor<F>, bins: usize) -> Result<LatentReport> {
    let z = flat(z)?;
    let fit = fit_latent_gaussian(&z)?;
    let to = |t: &Tensor<F>| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let (n, k) = (z.shape()[0], z.shape()[1]);
    let bins = bins.max(1);
    let mut histogram = Vec::with_capacity(k);
    for d in 0..k {
        let col: Vec<f64> = (0..n).map(|i| f64::from(z.data()[i * k + d])).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in &col {
            let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
        histogram.push(
            counts
                .into_iter()
                .enumerate()
                .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
                .collect(),
        );
    }
    Ok(LatentReport {
        mean: to(&fit.mu),
        sigma: to(&fit.sigma),
        skewness: to(&fit.skewness),
        excess_kurtosis: to(&fit.excess_kurtosis),
        histogram,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    write_atomic(path, &w.into_inner().expect("in-memory flush"))
}

/// Latents of the validation set (training set with `train_split`);
/// writes `latent_stats.csv` and `latent_histogram.csv`.
pub fn latent_stats(cfg: &Config, checkpoint: &Path, bins: usize, train_split: bool) -> Result<LatentReport> {
    let t = load_trainer(checkpoint)?;
    let (train, val) = cfg.dataset.load::<F>()?;
    let report = latent_report(&t.latents(if train_split { &train } else { &val })?, bins)?;
    let stats = (0..report.mean.len())
        .map(|d| {
            vec![
                d.to_string(),
                report.mean[d].to_string(),
                report.sigma[d].to_string(),
                report.skewness[d].to_string(),
                report.excess_kurtosis[d].to_string(),
            ]
        })
        .collect();
    write_rows(
        &cfg.output_dir.join("latent_stats.csv"),
        &["dim", "mean", "sigma", "skewness", "excess_kurtosis"],
        stats,
    )?;
    let hist = report
        .histogram
        .iter()
        .enumerate()
        .flat_map(|(d, h)| {
            h.iter()
                .map(move |(lo, hi, c)| vec![d.to_string(), lo.to_string(), hi.to_string(), c.to_string()])
        })
        .collect();
    write_rows(&cfg.output_dir.join("latent_histogram.csv"), &["dim", "bin_lo", "bin_hi", "count"], hist)?;
    Ok(report)
}

/// `cfg` with every hidden activation replaced by `kind`. A trailing
/// activation after the last weighted layer is the output nonlinearity
/// and is kept.
pub fn with_activation(cfg: &Config, kind: ActivationKind) -> Config {
    let mut c = cfg.clone();
    let layers = &mut c.model.decoder.layers;
    let last_weighted = layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. }));
    for (i, l) in layers.iter_mut().enumerate() {
        if let LayerSpec::Activation { kind: k } = l {
            if last_weighted.is_some_and(|lw| i < lw) {
                *k = kind;
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub activation: ActivationKind,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    /// `f″(0.5)`, the curvature the latent gradient depends on.
    pub second_derivative: f64,
}

/// One training run per activation in `kinds`, each in
/// `<output_dir>/ablation-<kind>`, spread over `threads` worker threads;
/// writes `ablation.csv`.
pub fn ablate_activations(cfg: &Config, kinds: &[ActivationKind], threads: usize) -> Result<Vec<AblationRow>> {
    create_dir(&cfg.output_dir)?;
    let jobs: Vec<(ActivationKind, Config)> = kinds
        .iter()
        .map(|&k| {
            let mut c = with_activation(cfg, k);
            c.output_dir = cfg.output_dir.join(format!("ablation-{}", k.name()));
            (k, c)
        })
        .collect();
    let threads = threads.clamp(1, jobs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<RunOutput>>>> = jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((_, c)) = jobs.get(i) else { break };
                *results[i].lock().expect("no poisoned result") = Some(train(c));
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for ((kind, _), r) in jobs.iter().zip(results) {
        let out = r.into_inner().expect("no poisoned result").expect("every job ran")?;
        let last = out.history.last().ok_or_else(|| Error::Csv("empty history".into()))?;
        rows.push(AblationRow {
            activation: *kind,
            final_train_loss: last.train_loss,
            final_val_loss: last.val_loss,
            second_derivative: kind.derivatives(0.5)?.2,
        });
    }
    let csv_rows = rows
        .iter()
        .map(|r| {
            vec![
                r.activation.name().to_string(),
                r.final_train_loss.to_string(),
                r.final_val_loss.to_string(),
                r.second_derivative.to_string(),
            ]
        })
        .collect();
    write_rows(
        &cfg.output_dir.join("ablation.csv"),
        &["activation", "final_train_loss", "final_val_loss", "second_derivative"],
        csv_rows,
    )?;
    Ok(rows)
}

/// Runs the finite-difference suite; writes `gradcheck.csv` into `dir`
/// when given.
pub fn gradcheck(dir: Option<&Path>) -> Result<Vec<CheckReport>> {
    let reports = gradcheck_suite()?;
    if let Some(dir) = dir {
        create_dir(dir)?;
        let rows = reports
            .iter()
            .map(|r| vec![r.name.clone(), r.first_order.to_string(), r.second_order.to_string(), r.passed().to_string()])
            .collect();
        write_rows(
            &dir.join("gradcheck.csv"),
            &["check", "first_order_rel_err", "second_order_rel_err", "passed"],
            rows,
        )?;
    }
    Ok(reports)
}
