//! PNG export of image grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gon_core::{Float, Tensor};

use crate::error::{Error, Result};

/// Gap between tiles, in pixels.
pub const SEPARATOR: usize = 2;
/// Separator intensity.
pub const SEPARATOR_VALUE: u8 = 255;

/// Rendered grid before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Interleaved row-major bytes.
    pub bytes: Vec<u8>,
    /// Values outside `[0, 1]` (or NaN) that were clamped.
    pub clamped: usize,
}

/// `v ∈ [0, 1]` to a byte, rounding half up: `⌊255·v + ½⌋`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// Tiles images `(N, C, H, W)` row-major, `cols` per row, with
/// [`SEPARATOR`]-pixel gaps between tiles and none around the border.
pub fn render_grid<T: Float>(images: &Tensor<T>, cols: usize) -> Result<Grid> {
    let s = images.shape();
    if s.len() != 4 || s[0] == 0 || !(s[1] == 1 || s[1] == 3) {
        return Err(Error::Image(format!("images {s:?} are not (N, 1|3, H, W) with N ≥ 1")));
    }
    if cols == 0 {
        return Err(Error::Image("grid needs at least one column".into()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let width = cols * w + (cols - 1) * SEPARATOR;
    let height = rows * h + (rows - 1) * SEPARATOR;
    let mut bytes = vec![SEPARATOR_VALUE; width * height * c];
    let mut clamped = 0;
    let data = images.data();
    for i in 0..n {
        let (r0, c0) = ((i / cols) * (h + SEPARATOR), (i % cols) * (w + SEPARATOR));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = data[((i * c + ch) * h + y) * w + x].to_f64();
                    let inside = (0.0..=1.0).contains(&v);
                    clamped += usize::from(!inside);
                    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                    bytes[((r0 + y) * width + c0 + x) * c + ch] = quantize(v);
                }
            }
        }
    }
    Ok(Grid {
        width,
        height,
        channels: c,
        bytes,
        clamped,
    })
}

pub fn write_png(grid: &Grid, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), grid.width as u32, grid.height as u32);
    enc.set_color(if grid.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&grid.bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer.finish().map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Renders and writes a grid; clamped values are reported on stderr.
pub fn save_image_grid<T: Float>(images: &Tensor<T>, cols: usize, path: &Path) -> Result<Grid> {
    let grid = render_grid(images, cols)?;
    if grid.clamped > 0 {
        eprintln!("warning: {} values outside [0, 1] clamped in {}", grid.clamped, path.display());
    }
    write_png(&grid, path)?;
    Ok(grid)
}

/// Decodes an 8-bit PNG into `(width, height, channels, bytes)`.
pub fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type.samples(), buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.0 / 255.0), 1);
        assert_eq!(quantize(0.4999 / 255.0), 0);
    }

    #[test]
    fn single_image_has_its_own_size() {
        let g = render_grid(&Tensor::<f32>::full(&[1, 1, 28, 28], 0.5), 8).unwrap();
        assert_eq!((g.width, g.height, g.channels), (28, 28, 1));
        assert!(g.bytes.iter().all(|&b| b == 128));
    }

    #[test]
    fn tiles_are_row_major_with_separators() {
        let imgs = Tensor::<f64>::from_fn(&[3, 1, 2, 2], |i| (i / 4) as f64 / 2.0);
        let g = render_grid(&imgs, 2).unwrap();
        assert_eq!((g.width, g.height), (6, 6));
        let px = |x: usize, y: usize| g.bytes[y * g.width + x];
        assert_eq!(px(0, 0), 0);
        assert_eq!(px(4, 1), 128);
        assert_eq!(px(1, 4), 255);
        assert_eq!(px(2, 0), SEPARATOR_VALUE);
        assert_eq!(px(4, 4), SEPARATOR_VALUE);
    }

    #[test]
    fn out_of_range_values_are_clamped_and_counted() {
        let imgs = Tensor::<f64>::new(vec![1, 1, 1, 4], vec![-0.5, 1.5, f64::NAN, 0.2]).unwrap();
        let g = render_grid(&imgs, 1).unwrap();
        assert_eq!(g.bytes, vec![0, 255, 0, 51]);
        assert_eq!(g.clamped, 3);
    }

    #[test]
    fn rgb_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let imgs = Tensor::<f32>::from_fn(&[2, 3, 4, 5], |i| (i % 7) as f32 / 6.0);
        let g = save_image_grid(&imgs, 2, &p).unwrap();
        let (w, h, c, bytes) = read_png(&p).unwrap();
        assert_eq!((w, h, c), (12, 4, 3));
        assert_eq!(bytes, g.bytes);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(render_grid(&Tensor::<f32>::zeros(&[1, 2, 2, 2]), 1).is_err());
        assert!(render_grid(&Tensor::<f32>::zeros(&[0, 1, 2, 2]), 1).is_err());
        assert!(render_grid(&Tensor::<f32>::zeros(&[1, 1, 2, 2]), 0).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("x.png");
        assert!(matches!(save_image_grid(&Tensor::<f32>::zeros(&[1, 1, 2, 2]), 1, &p), Err(Error::Io { .. })));
    }
}
