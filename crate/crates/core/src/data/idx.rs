//! IDX image and label files (big-endian header, unsigned-byte payload).

use std::path::Path;

use super::Dataset;
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn expect_magic(r: &mut Reader<'_>, magic: u32) -> Result<()> {
    let found = r.u32_be("magic")?;
    if found != magic {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

/// Images as `[N, 1, rows, cols]` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    expect_magic(&mut r, IMAGES_MAGIC)?;
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .map_or_else(|| r.fail("image dimensions overflow"), Ok)?;
    let pixels = r.take(total, "pixel data")?;
    if !r.at_end() {
        return r.fail("trailing bytes after pixel data");
    }
    Tensor::new(
        [n, 1, rows, cols],
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader::new(bytes);
    expect_magic(&mut r, LABELS_MAGIC)?;
    let n = r.u32_be("label count")? as usize;
    let labels = r.take(n, "label data")?.to_vec();
    if !r.at_end() {
        return r.fail("trailing bytes after label data");
    }
    Ok(labels)
}

pub fn read_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<Dataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("{} images but {} labels", images.shape()[0], labels.len()),
        });
    }
    Dataset::new(
        images,
        labels.into_iter().map(usize::from).collect(),
        num_classes,
    )
}

pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Contract(format!(
            "{} pixels for {n} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
