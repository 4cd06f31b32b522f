//! IDX (big-endian) image and label files.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::grad::Tensor;
use crate::Error;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn fail(path: &Path, offset: usize, msg: String) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        msg,
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, what: &str) -> Result<u32, Error> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| fail(path, bytes.len(), format!("truncated header: missing {what}")))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), Error> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(fail(path, 0, format!("bad magic: expected 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = be_u32(&bytes, 4, path, "image count")? as usize;
    let rows = be_u32(&bytes, 8, path, "row count")? as usize;
    let cols = be_u32(&bytes, 12, path, "column count")? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(fail(
            path,
            bytes.len(),
            format!("truncated pixel data: header declares {need} bytes, file has {}", bytes.len()),
        ));
    }
    Ok((n, rows, cols, bytes[16..need].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, Error> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(fail(path, 0, format!("bad magic: expected 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = be_u32(&bytes, 4, path, "label count")? as usize;
    if bytes.len() < 8 + n {
        return Err(fail(
            path,
            bytes.len(),
            format!("truncated labels: header declares {n}, file holds {}", bytes.len() - 8),
        ));
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Loads an image/label pair as `(n, 1, rows, cols)` in `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, Error> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(fail(labels_path, 4, format!("count mismatch: {n} images but {} labels", labels.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    LabeledDataset::new(
        Tensor::from_vec(&[n, 1, rows, cols], data),
        labels.into_iter().map(usize::from).collect(),
        classes,
        None,
    )
}

/// Writes pixels in `[0, 1]` (rounded to bytes) and labels as an IDX pair.
pub fn write_idx(images_path: &Path, labels_path: &Path, ds: &LabeledDataset) -> Result<(), Error> {
    let shape = ds.inputs.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::InvalidInput(format!("IDX needs (n, 1, h, w) inputs, got {shape:?}")));
    }
    if let Some(&l) = ds.labels.iter().find(|&&l| l > 255) {
        return Err(Error::InvalidInput(format!("label {l} does not fit in a byte")));
    }
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);
    let mut img = Vec::with_capacity(16 + ds.inputs.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.inputs.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}
