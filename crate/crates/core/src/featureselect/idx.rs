//! IDX files: a big-endian header `{magic, dims...}` followed by unsigned
//! bytes. Gzip-compressed files are recognised by their signature.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{format_err, invalid, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images and labels as stored, before binarisation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    /// `count x rows x cols` grey levels, row-major per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, n: usize) -> &[u8] {
        let p = self.n_pixels();
        &self.pixels[n * p..(n + 1) * p]
    }

    /// Average non-overlapping `2 x 2` windows (rounding half up); odd trailing
    /// rows and columns are dropped.
    pub fn downsample_2x(&self) -> RawDataset {
        let (r2, c2) = (self.rows / 2, self.cols / 2);
        let mut pixels = Vec::with_capacity(self.len() * r2 * c2);
        for n in 0..self.len() {
            let img = self.image(n);
            for r in 0..r2 {
                for c in 0..c2 {
                    let at = |dr: usize, dc: usize| u32::from(img[(2 * r + dr) * self.cols + 2 * c + dc]);
                    let sum = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                    pixels.push(((sum + 2) / 4) as u8);
                }
            }
        }
        RawDataset {
            rows: r2,
            cols: c2,
            pixels,
            labels: self.labels.clone(),
        }
    }

    /// The first `n` examples.
    pub fn truncate(&self, n: usize) -> RawDataset {
        let n = n.min(self.len());
        RawDataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.n_pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(at as u64, format!("truncated header: missing {what}")),
    }
}

/// `(count, rows, cols, payload)` of an image file.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IMAGES_MAGIC {
        return format_err(0, format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"));
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return format_err(
            16 + payload.len().min(expected) as u64,
            format!(
                "expected {expected} pixel bytes ({count} x {rows} x {cols}), found {}",
                payload.len()
            ),
        );
    }
    Ok((count, rows, cols, payload.to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != LABELS_MAGIC {
        return format_err(0, format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"));
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return format_err(
            8 + payload.len().min(count) as u64,
            format!("expected {count} label bytes, found {}", payload.len()),
        );
    }
    Ok(payload.to_vec())
}

/// Load an image file and its label file; plain or gzipped.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<RawDataset> {
    let (count, rows, cols, pixels) = parse_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    if labels.len() != count {
        return invalid(format!("{count} images but {} labels", labels.len()));
    }
    Ok(RawDataset {
        rows,
        cols,
        pixels,
        labels,
    })
}

pub fn write_images(w: &mut impl Write, ds: &RawDataset) -> Result<()> {
    for v in [IMAGES_MAGIC, ds.len() as u32, ds.rows as u32, ds.cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&ds.pixels)?;
    Ok(())
}

pub fn write_labels(w: &mut impl Write, labels: &[u8]) -> Result<()> {
    for v in [LABELS_MAGIC, labels.len() as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> RawDataset {
        RawDataset {
            rows: 2,
            cols: 4,
            pixels: (0..24).map(|v| (v * 10) as u8).collect(),
            labels: vec![3, 1, 4],
        }
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let mut img = Vec::new();
        write_images(&mut img, &ds).unwrap();
        let mut lab = Vec::new();
        write_labels(&mut lab, &ds.labels).unwrap();
        let (count, rows, cols, pixels) = parse_images(&img).unwrap();
        assert_eq!((count, rows, cols), (3, 2, 4));
        assert_eq!(pixels, ds.pixels);
        assert_eq!(parse_labels(&lab).unwrap(), ds.labels);

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab.gz");
        fs::write(&ip, &img).unwrap();
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&lab).unwrap();
        fs::write(&lp, gz.finish().unwrap()).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
    }

    #[test]
    fn header_arithmetic() {
        let ds = RawDataset {
            rows: 28,
            cols: 28,
            pixels: vec![0; 5 * 784],
            labels: vec![0; 5],
        };
        let mut img = Vec::new();
        write_images(&mut img, &ds).unwrap();
        assert_eq!(img.len(), 16 + 5 * 784);
        assert_eq!(parse_images(&img).unwrap().3.len(), 5 * 784);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut img = Vec::new();
        write_images(&mut img, &sample()).unwrap();
        let err = parse_images(&img[..img.len() - 4]).unwrap_err();
        match err {
            Error::Format { offset, message } => {
                assert_eq!(offset, img.len() as u64 - 4);
                assert!(message.contains("expected 24"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse_images(&img[..10]), Err(Error::Format { .. })));
        let mut lab = Vec::new();
        write_labels(&mut lab, &[1, 2]).unwrap();
        assert!(matches!(parse_images(&lab), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_labels(&img), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn downsample_averages_windows() {
        let ds = RawDataset {
            rows: 2,
            cols: 4,
            pixels: vec![0, 255, 10, 10, 255, 0, 10, 11],
            labels: vec![7],
        };
        let small = ds.downsample_2x();
        assert_eq!((small.rows, small.cols), (1, 2));
        // (0 + 255 + 255 + 0 + 2) / 4 = 128, (41 + 2) / 4 = 10
        assert_eq!(small.pixels, vec![128, 10]);
        assert_eq!(small.labels, vec![7]);
    }
}
