//! Training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "GONCKPT\0"
//! version   u32
//! meta      u64 length + compact JSON (decoder spec, run config, image
//!           shape, epoch, optimizer step, RNG position, metrics history)
//! count     u32
//! blob*     u32 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//!           u32 rank, rank × u64 extents, raw IEEE-754 elements
//! ```
//!
//! Blobs are `param/<name>` for every parameter, `adam.m/<name>` and
//! `adam.v/<name>` for the Adam moments and, for GLO runs, `glo/latents`,
//! `glo/m` and `glo/v`. Serialization is a pure function of the state, so
//! save → load → save reproduces the file byte for byte.

use std::io::Write;
use std::path::Path;

use gon_core::gon::GloTable;
use gon_core::nn::DecoderSpec;
use gon_core::train::{MetricsHistory, Model, OptimizerState, RngState, Trainer};
use gon_core::{DType, Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GONCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub dtype: DType,
    pub decoder: DecoderSpec,
    pub config: Config,
    pub image_shape: Vec<usize>,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer_step: u64,
    pub rng: RngState,
    pub history: MetricsHistory,
    /// Adam step count per GLO row.
    pub glo_steps: Option<Vec<u64>>,
    /// Wall-clock seconds trained so far, when recorded.
    pub elapsed_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub data: Vec<u8>,
}

impl Blob {
    pub fn from_tensor<T: Float>(name: String, t: &Tensor<T>) -> Self {
        let mut data = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
        for &v in t.data() {
            v.write_le(&mut data);
        }
        Blob {
            name,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "blob `{}` holds {} but {} was requested",
                self.name,
                self.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let size = self.dtype.size_of();
        let data = self.data.chunks_exact(size).map(T::read_le).collect();
        Ok(Tensor::new(self.shape.clone(), data)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub blobs: Vec<Blob>,
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

/// Bounds-checked reader over the file bytes.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} reading {what} ({n} bytes)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

impl Checkpoint {
    /// Snapshot of `trainer`, which must have been built from `config`.
    pub fn capture<T: Float>(trainer: &Trainer<T>, config: &Config, elapsed_seconds: Option<f64>) -> Self {
        let model = &trainer.model;
        let mut blobs = Vec::new();
        for p in model.params.params() {
            blobs.push(Blob::from_tensor(format!("param/{}", p.name), &p.value));
        }
        for (p, (m, v)) in model.params.params().iter().zip(trainer.optimizer.m.iter().zip(&trainer.optimizer.v)) {
            blobs.push(Blob::from_tensor(format!("adam.m/{}", p.name), m));
            blobs.push(Blob::from_tensor(format!("adam.v/{}", p.name), v));
        }
        if let Some(g) = &trainer.glo {
            blobs.push(Blob::from_tensor("glo/latents".into(), &g.latents));
            blobs.push(Blob::from_tensor("glo/m".into(), &g.m));
            blobs.push(Blob::from_tensor("glo/v".into(), &g.v));
        }
        let mut config = config.clone();
        config.model = model.config.clone();
        config.variant = model.variant;
        config.optimizer = trainer.optimizer.config;
        config.run = trainer.settings.clone();
        Checkpoint {
            meta: CheckpointMeta {
                dtype: T::DTYPE,
                decoder: model.config.decoder.clone(),
                config,
                image_shape: model.image_shape.clone(),
                epoch: trainer.epoch,
                optimizer_step: trainer.optimizer.step,
                rng: RngState::of(&trainer.rng),
                history: trainer.history.clone(),
                glo_steps: trainer.glo.as_ref().map(|g| g.steps.clone()),
                elapsed_seconds,
            },
            blobs,
        }
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing blob `{name}`")))
    }

    /// Rebuilds the trainer, ready to continue at epoch `meta.epoch + 1`.
    pub fn restore<T: Float>(&self) -> Result<Trainer<T>> {
        let meta = &self.meta;
        if meta.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("stored as {}, loaded as {}", meta.dtype.name(), T::DTYPE.name())));
        }
        if meta.decoder != meta.config.model.decoder {
            return Err(Error::Checkpoint("decoder spec differs from the stored config".into()));
        }
        let cfg = &meta.config;
        let mut model = Model::<T>::new(cfg.model.clone(), cfg.variant, &meta.image_shape, cfg.run.seed)?;
        let names: Vec<String> = model.params.params().iter().map(|p| p.name.clone()).collect();
        let expected = names.len() * 3 + if meta.glo_steps.is_some() { 3 } else { 0 };
        if self.blobs.len() != expected {
            return Err(Error::Checkpoint(format!("{} blobs, the model needs {expected}", self.blobs.len())));
        }
        let mut optimizer = OptimizerState::new(&model.params, cfg.optimizer);
        for (i, name) in names.iter().enumerate() {
            model.params.set(name, self.blob(&format!("param/{name}"))?.to_tensor()?)?;
            optimizer.m[i] = self.blob(&format!("adam.m/{name}"))?.to_tensor()?;
            optimizer.v[i] = self.blob(&format!("adam.v/{name}"))?.to_tensor()?;
        }
        optimizer.step = meta.optimizer_step;
        optimizer.check(&model.params)?;
        let glo = match &meta.glo_steps {
            Some(steps) => {
                let latents: Tensor<T> = self.blob("glo/latents")?.to_tensor()?;
                if latents.shape().first() != Some(&steps.len()) {
                    return Err(Error::Checkpoint("GLO table and step counts disagree".into()));
                }
                Some(GloTable {
                    m: self.blob("glo/m")?.to_tensor()?,
                    v: self.blob("glo/v")?.to_tensor()?,
                    latents,
                    steps: steps.clone(),
                })
            }
            None => None,
        };
        if (cfg.variant == gon_core::train::Variant::Glo) != glo.is_some() {
            return Err(Error::Checkpoint("GLO latent table present iff the variant is glo".into()));
        }
        Ok(Trainer {
            model,
            optimizer,
            settings: cfg.run.clone(),
            glo,
            epoch: meta.epoch,
            history: meta.history.clone(),
            rng: meta.rng.restore(),
            last_batch: None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(dtype_code(b.dtype));
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&b.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = c.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let n = c.len("metadata length")?;
        let meta: CheckpointMeta = serde_json::from_slice(c.take(n, "metadata")?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let count = c.u32("blob count")?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let n = c.u32("name length")? as usize;
            let name = std::str::from_utf8(c.take(n, "name")?)
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
                .to_string();
            let dtype = match c.u8("dtype")? {
                0 => DType::F32,
                1 => DType::F64,
                d => return Err(Error::Checkpoint(format!("blob `{name}` has unknown dtype code {d}"))),
            };
            let rank = c.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(c.len("extent")?);
            }
            let size = shape
                .iter()
                .try_fold(dtype.size_of(), |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("blob `{name}` shape {shape:?} overflows")))?;
            let data = c.take(size, &name)?.to_vec();
            blobs.push(Blob { name, dtype, shape, data });
        }
        if c.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(Checkpoint { meta, blobs })
    }

    /// Writes to a temporary file beside `path`, then renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Replaces `path` with `bytes` so readers see either the old or the new
/// file, never a partial one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gon_core::train::Variant;

    fn config(variant: &str) -> Config {
        let text = serde_json::json!({
            "dataset": {"kind": "blobs", "classes": 2, "per_class": 6, "val_per_class": 2, "dim": 4, "seed": 1},
            "model": {"decoder": {
                "latent_shape": [3], "output_shape": [4],
                "layers": [{"type": "dense", "input": 3, "output": 8},
                           {"type": "activation", "kind": "elu"},
                           {"type": "dense", "input": 8, "output": 4}]
            }},
            "variant": variant,
            "run": {"epochs": 2, "batch_size": 4, "seed": 5, "record_seconds": false}
        });
        Config::from_json(&text.to_string(), &[]).unwrap()
    }

    fn trained(cfg: &Config) -> Trainer<f64> {
        let (train, val) = cfg.dataset.load::<f64>().unwrap();
        let model = Model::new(cfg.model.clone(), cfg.variant, train.image_shape(), cfg.run.seed).unwrap();
        let mut t = Trainer::new(model, cfg.optimizer, cfg.run.clone(), &train).unwrap();
        t.fit(&train, &val).unwrap();
        t
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for v in ["gon", "glo", "ae"] {
            let cfg = config(v);
            let t = trained(&cfg);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.bin");
            Checkpoint::capture(&t, &cfg, Some(1.25)).save(&p).unwrap();
            let first = std::fs::read(&p).unwrap();
            let loaded = Checkpoint::load(&p).unwrap();
            loaded.save(&p).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), first, "{v}");
            let restored = loaded.restore::<f64>().unwrap();
            assert_eq!(Checkpoint::capture(&restored, &cfg, Some(1.25)).to_bytes(), first, "{v}");
            assert_eq!(restored.model, t.model);
            assert_eq!(restored.optimizer, t.optimizer);
            assert_eq!(restored.glo, t.glo);
            assert_eq!(restored.rng, t.rng);
            assert_eq!(restored.history, t.history);
        }
    }

    #[test]
    fn header_layout() {
        let cfg = config("gon");
        let b = Checkpoint::capture(&trained(&cfg), &cfg, None).to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        let n = u64::from_le_bytes(b[12..20].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&b[20..20 + n]).unwrap();
        assert_eq!(meta["dtype"], "f64");
        assert_eq!(meta["epoch"], 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = config("gon");
        let b = Checkpoint::capture(&trained(&cfg), &cfg, None).to_bytes();
        for cut in [0, 7, 12, 30, b.len() - 1] {
            assert!(Checkpoint::from_bytes(&b[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = b.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = b;
        bad.push(0);
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let cfg = config("gon");
        let c = Checkpoint::capture(&trained(&cfg), &cfg, None);
        assert!(c.restore::<f32>().is_err());
        assert!(c.blobs[0].to_tensor::<f32>().is_err());
    }

    #[test]
    fn missing_blob_is_rejected() {
        let cfg = config("gon");
        let mut c = Checkpoint::capture(&trained(&cfg), &cfg, None);
        c.blobs.pop();
        assert!(c.restore::<f64>().is_err());
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let mut cfg = config("gon");
        cfg.run.epochs = 4;
        let (train, val) = cfg.dataset.load::<f64>().unwrap();
        let full = trained(&cfg);
        let mut half_cfg = cfg.clone();
        half_cfg.run.epochs = 2;
        let mut half = trained(&half_cfg);
        half.settings.epochs = 4;
        let bytes = Checkpoint::capture(&half, &cfg, None).to_bytes();
        let mut resumed: Trainer<f64> = Checkpoint::from_bytes(&bytes).unwrap().restore().unwrap();
        assert_eq!(resumed.settings.epochs, 4);
        resumed.fit(&train, &val).unwrap();
        assert_eq!(resumed.model, full.model);
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.model.variant, Variant::Gon);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("no").join("x.bin"), b"z").is_err());
    }
}
