//! IDX image/label files (the MNIST family container format).
//!
//! Layout: a 4-byte big-endian magic (`0x00000803` for rank-3 unsigned-byte
//! images, `0x00000801` for rank-1 unsigned-byte labels), one big-endian
//! `u32` per dimension, then the raw bytes in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::models::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32("magic")?;
        if got != expected {
            return Err(self.err(0, format!("bad magic 0x{got:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }
}

/// Raw images: `(count, rows, cols, pixels)`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.magic(IMAGE_MAGIC)?;
    let n = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let pixels = c.take(n * rows * cols, "pixel data")?;
    Ok((n, rows, cols, pixels.to_vec()))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.magic(LABEL_MAGIC)?;
    let n = c.u32("label count")? as usize;
    Ok(c.take(n, "label data")?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label pair into a dataset with pixels scaled to [0, 1]
/// and each image flattened row-major.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(images_path, &read(images_path)?)?;
    let labels = parse_labels(labels_path, &read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {n} images", labels.len()),
        });
    }
    let features = Array2::from_shape_vec(
        (n, rows * cols),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("pixel count checked by parser");
    Dataset::new(features, labels.iter().map(|&l| f64::from(l)).collect(), 0)
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
