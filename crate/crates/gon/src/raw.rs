//! Raw-tensor import for datasets without a dedicated parser.
//!
//! A JSON manifest
//!
//! ```json
//! { "dtype": "u8", "shape": [N, C, H, W], "data_file": "images.bin",
//!   "labels_file": "labels.bin" }
//! ```
//!
//! names a blob of `N·C·H·W` little-endian elements in row-major order.
//! `u8` values are scaled by `1/255`; `f32` and `f64` values are taken as
//! they are and must already lie in `[0, 1]`. The optional label blob holds
//! one little-endian `u32` per image. Relative file names resolve against
//! the manifest's directory.

use std::path::{Path, PathBuf};

use gon_core::data::{Dataset, Split};
use gon_core::{Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDType {
    U8,
    F32,
    F64,
}

impl RawDType {
    pub fn size_of(self) -> usize {
        match self {
            RawDType::U8 => 1,
            RawDType::F32 => 4,
            RawDType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    pub dtype: RawDType,
    /// `(N, C, H, W)`.
    pub shape: Vec<usize>,
    pub data_file: PathBuf,
    #[serde(default)]
    pub labels_file: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn decode<T: Float>(dtype: RawDType, bytes: &[u8]) -> Vec<T> {
    match dtype {
        RawDType::U8 => bytes.iter().map(|&b| T::from_f64(f64::from(b) / 255.0)).collect(),
        RawDType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect(),
        RawDType::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect(),
    }
}

pub fn load_raw<T: Float>(manifest_path: &Path, split: Split) -> Result<Dataset<T>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: RawManifest = serde_json::from_str(&text).map_err(|e| Error::Raw(format!("{}: {e}", manifest_path.display())))?;
    if m.shape.len() != 4 {
        return Err(Error::Raw(format!("shape {:?} is not (N, C, H, W)", m.shape)));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let data_path = resolve(base, &m.data_file);
    let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let count = m
        .shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(m.dtype.size_of()))
        .ok_or_else(|| Error::Raw(format!("shape {:?} overflows", m.shape)))?;
    if bytes.len() != count {
        return Err(Error::Raw(format!(
            "{} holds {} bytes, shape {:?} needs {count}",
            data_path.display(),
            bytes.len(),
            m.shape
        )));
    }
    let images = Tensor::new(m.shape.clone(), decode(m.dtype, &bytes))?;
    let labels = match &m.labels_file {
        Some(p) => {
            let lp = resolve(base, p);
            let lb = std::fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
            if lb.len() != 4 * m.shape[0] {
                return Err(Error::Raw(format!("{} holds {} bytes, expected {}", lp.display(), lb.len(), 4 * m.shape[0])));
            }
            Some(lb.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect())
        }
        None => None,
    };
    Ok(Dataset::new(images, labels, split)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, manifest: &str, data: &[u8]) -> PathBuf {
        std::fs::write(dir.join("data.bin"), data).unwrap();
        let p = dir.join("m.json");
        std::fs::write(&p, manifest).unwrap();
        p
    }

    #[test]
    fn u8_blob_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"dtype":"u8","shape":[2,1,1,2],"data_file":"data.bin"}"#, &[0, 51, 255, 102]);
        let d = load_raw::<f64>(&p, Split::Val).unwrap();
        assert_eq!(d.images.shape(), &[2, 1, 1, 2]);
        assert_eq!(d.images.data(), &[0.0, 0.2, 1.0, 0.4]);
        assert_eq!(d.labels, None);
    }

    #[test]
    fn f32_blob_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = [0.25f32, 0.5, 0.75].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("l.bin"), [2u8, 0, 0, 0, 1, 0, 0, 0, 9, 0, 0, 0]).unwrap();
        let p = write(
            dir.path(),
            r#"{"dtype":"f32","shape":[3,1,1,1],"data_file":"data.bin","labels_file":"l.bin"}"#,
            &data,
        );
        let d = load_raw::<f32>(&p, Split::Train).unwrap();
        assert_eq!(d.images.data(), &[0.25, 0.5, 0.75]);
        assert_eq!(d.labels, Some(vec![2, 1, 9]));
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"dtype":"u8","shape":[2,1,1,2],"data_file":"data.bin"}"#, &[0, 1, 2]);
        assert!(matches!(load_raw::<f64>(&p, Split::Val), Err(Error::Raw(_))));
        let p = write(dir.path(), r#"{"dtype":"u8","shape":[4],"data_file":"data.bin"}"#, &[0; 4]);
        assert!(load_raw::<f64>(&p, Split::Val).is_err());
        let p = write(dir.path(), r#"{"dtype":"u8","shape":[1,1,1,1],"data_file":"data.bin","extra":1}"#, &[0]);
        assert!(load_raw::<f64>(&p, Split::Val).is_err());
        let bytes: Vec<u8> = 1.5f64.to_le_bytes().to_vec();
        let p = write(dir.path(), r#"{"dtype":"f64","shape":[1,1,1,1],"data_file":"data.bin"}"#, &bytes);
        assert!(matches!(load_raw::<f64>(&p, Split::Val), Err(Error::Core(_))));
    }
}
