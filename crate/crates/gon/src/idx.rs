//! IDX image and label files, optionally gzip-compressed.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 `u8` images,
//! `0x00000801` for rank-1 `u8` labels), one big-endian `u32` per dimension,
//! then the raw bytes in row-major order. Files must end exactly after the
//! payload.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use gon_core::data::{Dataset, Split};
use gon_core::{Float, Tensor};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Decoded image file: `n` images of `rows × cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            what,
            offset: bytes.len(),
            reason: format!("header truncated, need {} bytes", offset + 4),
        })
}

/// Parses a header of `rank` dimensions after `magic`, then checks the file
/// length. Returns the dimensions and the payload.
fn parse<'a>(bytes: &'a [u8], magic: u32, rank: usize, what: &'static str) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, what)?;
    if found != magic {
        return Err(Error::Idx {
            what,
            offset: 0,
            reason: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let offset = 4 + 4 * i;
        let d = be_u32(bytes, offset, what)? as usize;
        // the count may be zero; spatial extents may not
        if d == 0 && i > 0 {
            return Err(Error::Idx {
                what,
                offset,
                reason: format!("dimension {i} is zero"),
            });
        }
        dims.push(d);
    }
    let header = 4 + 4 * rank;
    let payload = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Idx {
        what,
        offset: 4,
        reason: format!("dimensions {dims:?} overflow"),
    })?;
    let expected = header.checked_add(payload).ok_or_else(|| Error::Idx {
        what,
        offset: 4,
        reason: "payload size overflows".into(),
    })?;
    if bytes.len() < expected {
        return Err(Error::Idx {
            what,
            offset: bytes.len(),
            reason: format!("truncated, dimensions {dims:?} need {expected} bytes"),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Idx {
            what,
            offset: expected,
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    Ok((dims, &bytes[header..]))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, payload) = parse(bytes, IMAGES_MAGIC, 3, "images")?;
    Ok(IdxImages {
        n: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels: payload.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (_, payload) = parse(bytes, LABELS_MAGIC, 1, "labels")?;
    Ok(payload.to_vec())
}

/// Serializes images; `pixels.len()` must equal `n·rows·cols`.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel count");
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// File contents, inflated when they start with the gzip magic.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        return Ok(out);
    }
    Ok(raw)
}

/// Images scaled by `1/255` into `(N, 1, rows, cols)`, with labels when a
/// label file is given.
pub fn load_idx<T: Float>(images_path: &Path, labels_path: Option<&Path>, split: Split) -> Result<Dataset<T>> {
    let img = parse_images(&read_bytes(images_path)?)?;
    let labels = match labels_path {
        Some(p) => {
            let l = parse_labels(&read_bytes(p)?)?;
            if l.len() != img.n {
                return Err(Error::Idx {
                    what: "labels",
                    offset: 4,
                    reason: format!("{} labels for {} images", l.len(), img.n),
                });
            }
            Some(l.into_iter().map(usize::from).collect())
        }
        None => None,
    };
    let data = img.pixels.iter().map(|&p| T::from_f64(f64::from(p) / 255.0)).collect();
    let images = Tensor::new(vec![img.n, 1, img.rows, img.cols], data)?;
    Ok(Dataset::new(images, labels, split)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Vec<u8> {
        encode_images(2, 2, 3, &[0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255])
    }

    #[test]
    fn single_image_round_trips() {
        let px: Vec<u8> = (0..6).map(|i| i * 40).collect();
        let bytes = encode_images(1, 2, 3, &px);
        let img = parse_images(&bytes).unwrap();
        assert_eq!((img.n, img.rows, img.cols), (1, 2, 3));
        assert_eq!(img.pixels, px);
        assert_eq!(encode_images(img.n, img.rows, img.cols, &img.pixels), bytes);
    }

    #[test]
    fn header_is_big_endian() {
        let bytes = encode_images(1, 28, 28, &[0; 784]);
        assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28]);
        assert_eq!(&encode_labels(&[7])[..], &[0, 0, 8, 1, 0, 0, 0, 1, 7]);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let mut b = fixture();
        b[3] = 0x01;
        match parse_images(&b) {
            Err(Error::Idx { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_labels(&fixture()).is_err());
    }

    #[test]
    fn truncation_reports_file_length() {
        let b = fixture();
        match parse_images(&b[..b.len() - 1]) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, b.len() - 1),
            other => panic!("{other:?}"),
        }
        match parse_images(&b[..10]) {
            Err(Error::Idx { offset: 10, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = fixture();
        b.push(0);
        match parse_images(&b) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, b.len() - 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_extent_rejected() {
        let mut b = encode_images(0, 1, 1, &[]);
        assert_eq!(parse_images(&b).unwrap().n, 0);
        b[11] = 0;
        match parse_images(&b) {
            Err(Error::Idx { offset: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn huge_dimensions_do_not_overflow() {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, u32::MAX, u32::MAX, u32::MAX] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        assert!(parse_images(&b).is_err());
    }

    #[test]
    fn load_scales_and_checks_label_count() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, fixture()).unwrap();
        std::fs::write(&lp, encode_labels(&[3, 9])).unwrap();
        let d = load_idx::<f64>(&ip, Some(&lp), Split::Train).unwrap();
        assert_eq!(d.images.shape(), &[2, 1, 2, 3]);
        assert_eq!(d.images.data()[1], 1.0 / 255.0);
        assert_eq!(d.images.data()[11], 1.0);
        assert_eq!(d.labels, Some(vec![3, 9]));
        std::fs::write(&lp, encode_labels(&[3])).unwrap();
        match load_idx::<f64>(&ip, Some(&lp), Split::Train) {
            Err(Error::Idx { what: "labels", offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gzip_is_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.gz");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&fixture()).unwrap();
        std::fs::write(&p, enc.finish().unwrap()).unwrap();
        assert_eq!(read_bytes(&p).unwrap(), fixture());
    }

    proptest! {
        #[test]
        fn every_header_mutation_is_rejected(pos in 0usize..16, bit in 0u8..8) {
            let mut b = fixture();
            b[pos] ^= 1 << bit;
            prop_assert!(parse_images(&b).is_err());
        }

        #[test]
        fn every_truncation_is_rejected(cut in 0usize..28) {
            let b = fixture();
            prop_assert!(parse_images(&b[..cut]).is_err());
        }
    }
}
