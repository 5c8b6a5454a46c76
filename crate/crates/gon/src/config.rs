//! Run configuration files.
//!
//! A config is a JSON object with the keys `dataset`, `model`, `variant`,
//! `optimizer`, `run` and `output_dir`; unknown keys at any level are
//! rejected. `optimizer`, `run` and `output_dir` may be omitted and take
//! their defaults. Overrides `a.b.c=value` edit the parsed JSON before it is
//! checked: the value is read as JSON when it parses as JSON and as a
//! string otherwise.

use std::path::{Path, PathBuf};

use gon_core::data::{synthetic_blobs, Dataset, Split};
use gon_core::train::{AdamConfig, ModelConfig, RunSettings, Variant};
use gon_core::Float;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::raw::load_raw;

/// File name of the effective-config dump in every output directory.
pub const EFFECTIVE_CONFIG: &str = "config.json";

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX image files with optional labels; `*_limit` keeps the first
    /// examples only.
    Idx {
        train_images: PathBuf,
        #[serde(default)]
        train_labels: Option<PathBuf>,
        val_images: PathBuf,
        #[serde(default)]
        val_labels: Option<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        val_limit: Option<usize>,
    },
    /// Raw-tensor manifests.
    Raw {
        train_manifest: PathBuf,
        val_manifest: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        val_limit: Option<usize>,
    },
    /// Synthetic Gaussian clusters, images `(1, 1, dim)`; validation draws
    /// use `seed + 1`.
    Blobs {
        classes: usize,
        per_class: usize,
        val_per_class: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetConfig {
    /// Training and validation sets.
    pub fn load<T: Float>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        let limit = |d: Dataset<T>, n: Option<usize>| -> Result<Dataset<T>> {
            match n {
                Some(n) => Ok(d.take(n)?),
                None => Ok(d),
            }
        };
        match self {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                val_images,
                val_labels,
                train_limit,
                val_limit,
            } => Ok((
                limit(load_idx(train_images, train_labels.as_deref(), Split::Train)?, *train_limit)?,
                limit(load_idx(val_images, val_labels.as_deref(), Split::Val)?, *val_limit)?,
            )),
            DatasetConfig::Raw {
                train_manifest,
                val_manifest,
                train_limit,
                val_limit,
            } => Ok((
                limit(load_raw(train_manifest, Split::Train)?, *train_limit)?,
                limit(load_raw(val_manifest, Split::Val)?, *val_limit)?,
            )),
            DatasetConfig::Blobs {
                classes,
                per_class,
                val_per_class,
                dim,
                seed,
            } => {
                let train = synthetic_blobs(*classes, *per_class, *dim, *seed)?;
                let mut val = synthetic_blobs(*classes, *val_per_class, *dim, seed.wrapping_add(1))?;
                val.split = Split::Val;
                Ok((train, val))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub variant: Variant,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Sets `path` (dot separated; numeric segments index arrays) in `root`,
/// creating objects on the way.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for seg in key.split('.') {
        node = match node {
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| Error::Config(format!("`{seg}` in `{key}` indexes an array")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| Error::Config(format!("index {i} in `{key}` out of range for length {len}")))?
            }
            Value::Object(map) => map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default())),
            _ => return Err(Error::Config(format!("`{key}` descends into a non-object at `{seg}`"))),
        };
    }
    *node = value;
    Ok(())
}

impl Config {
    /// Parses `text` after applying `overrides` in order.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Config = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    /// Checks everything that can be checked without the data.
    pub fn check(&self) -> Result<()> {
        let wrap = |e: gon_core::Error| Error::Config(e.to_string());
        self.optimizer.validate().map_err(wrap)?;
        self.run.validate().map_err(wrap)?;
        self.model.decoder.validate().map_err(wrap)?;
        self.variant.inference().validate().map_err(wrap)?;
        if (self.variant == Variant::Vgon) != self.model.decoder.reparameterize_index().is_some() {
            return Err(Error::Config("a reparameterize layer is required by, and only by, the vgon variant".into()));
        }
        if (self.variant == Variant::Implicit) != self.model.decoder.is_implicit() {
            return Err(Error::Config("the implicit variant needs a coordinate decoder and vice versa".into()));
        }
        if self.variant == Variant::Classifier && self.model.classes < 2 {
            return Err(Error::Config("the classifier variant needs model.classes >= 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective config into `dir`, creating it.
    pub fn dump(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "dataset": {"kind": "blobs", "classes": 2, "per_class": 8, "val_per_class": 4, "dim": 4},
            "model": {"decoder": {
                "latent_shape": [2], "output_shape": [4],
                "layers": [{"type": "dense", "input": 2, "output": 4}]
            }},
            "variant": "gon"
        })
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let c = Config::from_json(&base().to_string(), &[]).unwrap();
        assert_eq!(c.optimizer, AdamConfig::default());
        assert_eq!(c.run, RunSettings::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.model.prior_var, 2.0);
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for path in ["extra", "run.extra", "optimizer.extra", "model.extra", "dataset.extra", "model.decoder.extra"] {
            let o = format!("{path}=1");
            assert!(matches!(Config::from_json(&base().to_string(), &[o]), Err(Error::Config(_))), "{path}");
        }
    }

    #[test]
    fn overrides_parse_json_then_string() {
        let c = Config::from_json(
            &base().to_string(),
            &[
                "run.epochs=3".into(),
                "optimizer.lr=0.01".into(),
                "output_dir=runs/a=b".into(),
                "variant={\"n_step\":{\"steps\":10,\"detach\":true}}".into(),
                "model.decoder.layers.0.output=4".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.run.epochs, 3);
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.output_dir, PathBuf::from("runs/a=b"));
        assert_eq!(c.variant, Variant::NStep { steps: 10, detach: true });
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in [
            "run.epochs",
            "=3",
            "run..epochs=3",
            "variant.x=1",
            "model.decoder.layers.7.output=1",
            "run.epochs=-1",
        ] {
            assert!(matches!(Config::from_json(&base().to_string(), &[o.into()]), Err(Error::Config(_))), "{o}");
        }
    }

    #[test]
    fn dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = Config::from_json(&base().to_string(), &["run.seed=7".into(), "run.max_steps=5".into()]).unwrap();
        let p = c.dump(dir.path()).unwrap();
        let back = Config::load(&p, &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.run.seed, 7);
        assert_eq!(back.to_json(), c.to_json());
    }

    #[test]
    fn variant_and_decoder_must_agree() {
        assert!(Config::from_json(&base().to_string(), &["variant=vgon".into()]).is_err());
        assert!(Config::from_json(&base().to_string(), &["variant=implicit".into()]).is_err());
        assert!(Config::from_json(&base().to_string(), &["variant=classifier".into()]).is_err());
        assert!(Config::from_json(&base().to_string(), &["variant=classifier".into(), "model.classes=2".into()]).is_ok());
        assert!(Config::from_json(&base().to_string(), &["optimizer.lr=0".into()]).is_err());
    }

    #[test]
    fn blobs_load_disjoint_splits() {
        let c = Config::from_json(&base().to_string(), &[]).unwrap();
        let (t, v) = c.dataset.load::<f32>().unwrap();
        assert_eq!((t.len(), v.len()), (16, 8));
        assert_eq!(t.image_shape(), &[1, 1, 4]);
        assert_eq!(v.split, Split::Val);
        assert_ne!(t.images.data()[..4], v.images.data()[..4]);
    }

    #[test]
    fn missing_file_is_config_error() {
        assert!(matches!(Config::load(Path::new("/nonexistent/c.json"), &[]), Err(Error::Config(_))));
    }
}
