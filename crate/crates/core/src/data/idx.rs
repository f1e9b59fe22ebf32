//! IDX (big-endian) image/label files as used by the classic digit datasets.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::format(0, format!("bad magic {magic:#010x}, expected {want:#010x}")));
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated image data: {need} bytes expected"),
        ));
    }
    Ok((n, rows, cols, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated label data: {} bytes expected", 8 + n),
        ));
    }
    Ok(&bytes[8..8 + n])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair into a `1×H×W` dataset scaled to `[0, 1]`.
/// The class count is inferred as `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let img_bytes = read(images_path)?;
    let lbl_bytes = read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::format(
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::format(8, "zero image extent"));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(1, |m| m + 1);
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    LabeledDataset::new(name, vec![1, rows, cols], k, features, labels)
}
