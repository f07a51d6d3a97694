//! IDX files (the MNIST container): a 4-byte magic whose third byte is the
//! element type (0x08 = unsigned byte) and fourth the rank, followed by
//! big-endian `u32` dimensions and the row-major payload.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let what = path.display();
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{what}: file too short for an IDX header")));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::Format(format!("{what}: magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let end = 4 + 4 * rank;
    if bytes.len() < end {
        return Err(Error::Format(format!("{what}: truncated dimension header")));
    }
    let dims: Vec<usize> = bytes[4..end]
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("{what}: dimensions overflow")))?;
    if bytes.len() - end != count {
        return Err(Error::Format(format!(
            "{what}: payload has {} bytes, dimensions {dims:?} require {count}",
            bytes.len() - end
        )));
    }
    Ok((dims, end))
}

/// Images flattened to rows, pixels scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let (dims, start) = header(&bytes, IMAGES_MAGIC, path)?;
    let (n, w) = (dims[0], dims[1] * dims[2]);
    if n == 0 || w == 0 {
        return Err(Error::Format(format!("{}: empty image set", path.display())));
    }
    Tensor::new(n, w, bytes[start..].iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read_idx_labels(path: &Path, num_classes: usize) -> Result<Vec<usize>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let (_, start) = header(&bytes, LABELS_MAGIC, path)?;
    bytes[start..]
        .iter()
        .map(|&b| {
            let l = b as usize;
            if l < num_classes {
                Ok(l)
            } else {
                Err(Error::Format(format!(
                    "{}: label {l} outside 0..{num_classes}",
                    path.display()
                )))
            }
        })
        .collect()
}

pub fn load_idx(images: &Path, labels: &Path, num_classes: usize, split: Split) -> Result<Dataset> {
    Dataset::new(read_idx_images(images)?, read_idx_labels(labels, num_classes)?, num_classes, split)
}

/// Writes `n` images of `rows × cols` bytes.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::invalid("pixel count is not a multiple of the image size"));
    }
    let n = pixels.len() / (rows * cols);
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_idx_images(&img, 2, 2, &pixels).unwrap();
        write_idx_labels(&lab, &[0, 2, 1]).unwrap();
        let d = load_idx(&img, &lab, 3, Split::Train).unwrap();
        assert_eq!(d.samples.shape(), (3, 4));
        assert_eq!(d.samples.get(0, 1), 20.0 / 255.0);
        assert_eq!(d.labels, vec![0, 2, 1]);
    }

    #[test]
    fn malformed_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&img, 2, 2, &[0; 8]).unwrap();
        write_idx_labels(&lab, &[0, 5]).unwrap();
        assert!(read_idx_labels(&lab, 3).unwrap_err().to_string().contains("label 5"));
        // swapped magic
        assert!(read_idx_images(&lab).is_err());
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_idx_images(&img).is_err());
        assert!(matches!(read_idx_images(&dir.path().join("nope")), Err(Error::Missing(_))));
    }
}
