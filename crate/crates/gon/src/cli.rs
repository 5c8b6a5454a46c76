//! `gon <verb> --config PATH [--override K=V]... [--out DIR] [--seed N]`
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime or
//! numerical error, 3 gradient-check failure. Messages go to stderr.
//! `GON_THREADS` sets the number of worker threads for
//! `ablate-activations`; nothing else reads the environment.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gon_core::nn::ActivationKind;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::runner::{self, SampleMode};

pub const THREADS_VAR: &str = "GON_THREADS";

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gon", version, about = "Train and inspect gradient origin networks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key assignment applied to the config, e.g. `run.epochs=5`.
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
    /// Output directory; replaces `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; replaces `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CheckpointArg {
    /// Checkpoint to read; defaults to `<output dir>/checkpoint.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleArg {
    Auto,
    Prior,
    Fit,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Train a model; writes metrics.csv, checkpoints and reconstruction grids.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint instead of starting afresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Validation originals next to their reconstructions.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 32)]
        count: usize,
    },
    /// Decode latents drawn from the prior or from a Gaussian fit.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, value_enum, default_value_t = SampleArg::Auto)]
        mode: SampleArg,
    },
    /// Spherical interpolation between validation pairs.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 8)]
        pairs: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Render an implicit model at a multiple of its training resolution.
    Superres {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Train once per hidden activation and tabulate the final losses.
    AblateActivations {
        #[command(flatten)]
        common: Common,
        /// Activations to try; all of them by default.
        #[arg(long, value_delimiter = ',')]
        activations: Vec<String>,
    },
    /// Finite-difference check of every primitive and composed objective.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Latent moments and histograms.
    LatentStats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Use the training split instead of the validation split.
        #[arg(long)]
        train_split: bool,
    },
}

impl Common {
    /// Effective config: file, then overrides, then `--seed` and `--out`;
    /// dumped to the output directory.
    fn load(&self) -> Result<Config> {
        let path = self.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("run.seed={s}"));
        }
        if let Some(o) = &self.out {
            let v = serde_json::Value::String(o.to_string_lossy().into_owned());
            overrides.push(format!("output_dir={v}"));
        }
        let cfg = Config::load(path, &overrides)?;
        cfg.dump(&cfg.output_dir)?;
        Ok(cfg)
    }
}

impl CheckpointArg {
    fn resolve(&self, cfg: &Config) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join(runner::CHECKPOINT))
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_VAR}={v} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

fn report(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn execute(verb: Verb) -> Result<i32> {
    match verb {
        Verb::Train { common, resume } => {
            let cfg = common.load()?;
            let out = match resume {
                Some(p) => runner::resume(&cfg, &p)?,
                None => runner::train(&cfg)?,
            };
            if let Some(r) = out.history.last() {
                eprintln!("epoch {}: train {} val {}", r.epoch, r.train_loss, r.val_loss);
            }
            report(&out.dir.join(runner::METRICS_CSV));
        }
        Verb::Reconstruct { common, ckpt, count } => {
            let cfg = common.load()?;
            report(&runner::reconstruct(&cfg, &ckpt.resolve(&cfg), count)?);
        }
        Verb::Sample { common, ckpt, count, mode } => {
            let cfg = common.load()?;
            let mode = match mode {
                SampleArg::Auto => SampleMode::Auto,
                SampleArg::Prior => SampleMode::Prior,
                SampleArg::Fit => SampleMode::Fit,
            };
            report(&runner::sample(&cfg, &ckpt.resolve(&cfg), count, mode, cfg.run.seed)?);
        }
        Verb::Interpolate { common, ckpt, pairs, steps } => {
            let cfg = common.load()?;
            report(&runner::interpolate(&cfg, &ckpt.resolve(&cfg), pairs, steps)?);
        }
        Verb::Superres { common, ckpt, scale, count } => {
            let cfg = common.load()?;
            report(&runner::superres(&cfg, &ckpt.resolve(&cfg), scale, count)?);
        }
        Verb::AblateActivations { common, activations } => {
            let cfg = common.load()?;
            let kinds = if activations.is_empty() {
                ActivationKind::ALL.to_vec()
            } else {
                activations
                    .iter()
                    .map(|a| a.parse().map_err(|e: gon_core::Error| Error::Config(e.to_string())))
                    .collect::<Result<Vec<_>>>()?
            };
            let rows = runner::ablate_activations(&cfg, &kinds, threads()?)?;
            for r in &rows {
                println!(
                    "{:<10} train {:<12.6} val {:<12.6} f''(0.5) {:.6}",
                    r.activation.name(),
                    r.final_train_loss,
                    r.final_val_loss,
                    r.second_derivative
                );
            }
            report(&cfg.output_dir.join("ablation.csv"));
        }
        Verb::Gradcheck { common } => {
            let dir = match (&common.config, &common.out) {
                (Some(_), _) => Some(common.load()?.output_dir),
                (None, out) => out.clone(),
            };
            let reports = runner::gradcheck(dir.as_deref())?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!r.passed());
                println!("{status:<4} {:<40} first {:.3e} second {:.3e}", r.name, r.first_order, r.second_order);
            }
            println!("{} checks, {failed} failed", reports.len());
            if failed > 0 {
                eprintln!("gradient check failed");
                return Ok(EXIT_GRADCHECK);
            }
        }
        Verb::LatentStats {
            common,
            ckpt,
            bins,
            train_split,
        } => {
            let cfg = common.load()?;
            let r = runner::latent_stats(&cfg, &ckpt.resolve(&cfg), bins, train_split)?;
            let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            println!(
                "{} dims, max |skewness| {:.4}, max |excess kurtosis| {:.4}",
                r.mean.len(),
                max_abs(&r.skewness),
                max_abs(&r.excess_kurtosis)
            );
            report(&cfg.output_dir.join("latent_stats.csv"));
        }
    }
    Ok(0)
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.verb) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_verb_and_missing_config_exit_1() {
        assert_eq!(run(["gon", "fly"]), EXIT_CONFIG);
        assert_eq!(run(["gon", "train"]), EXIT_CONFIG);
        assert_eq!(run(["gon", "train", "--config", "/nonexistent.json"]), EXIT_CONFIG);
        assert_eq!(run(["gon", "--help"]), 0);
    }
}
