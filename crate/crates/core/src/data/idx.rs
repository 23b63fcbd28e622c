//! IDX files (the MNIST distribution format): big-endian `u32` magic and
//! dimensions followed by raw `u8` values.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn fmt_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| fmt_err(at, "truncated header"))
}

struct Images {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

fn parse_images(bytes: &[u8]) -> Result<Images> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(fmt_err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(fmt_err(bytes.len(), format!("expected {need} pixel bytes, found {}", body.len())));
    }
    if body.len() > need {
        return Err(fmt_err(16 + need, "trailing bytes after pixel data"));
    }
    Ok(Images {
        count,
        rows,
        cols,
        pixels: body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(fmt_err(0, format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(fmt_err(
            8 + body.len().min(count),
            format!("header declares {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Decodes an image file and a label file already in memory.
/// Pixels are scaled to `[0, 1]`; the class count is `max(label) + 1`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let img = parse_images(images)?;
    let lab = parse_labels(labels)?;
    if lab.len() != img.count {
        return Err(fmt_err(
            4,
            format!("{} images but {} labels", img.count, lab.len()),
        ));
    }
    let num_classes = lab.iter().max().map_or(0, |m| m + 1);
    let dim = img.rows * img.cols;
    let features = Tensor::new(vec![img.count, dim], img.pixels)?;
    LabeledDataset::new("idx", features, lab, num_classes)?.with_image_shape([1, img.rows, img.cols])
}

/// Loads an IDX image file and its companion label file.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let mut ds = parse_idx(&ib, &lb)?;
    ds.name = ip
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(ds)
}

/// Encodes `u8` images (`count × rows × cols`) as an IDX image file.
pub fn write_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // 4 images of 2×2, hand-encoded
    const IMAGES: [u8; 32] = [
        0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x04, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,
        0x02, 0, 255, 51, 102, 255, 255, 255, 255, 0, 0, 0, 0, 1, 2, 3, 4,
    ];
    const LABELS: [u8; 12] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x04, 3, 0, 1, 2];

    #[test]
    fn decodes_hand_fixture() {
        let ds = parse_idx(&IMAGES, &LABELS).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[3, 0, 1, 2]);
        assert_eq!(ds.num_classes(), 4);
        assert_eq!(ds.features().row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.features().row(3)[3], 4.0 / 255.0);
        assert_eq!(ds.image_shape, Some([1, 2, 2]));
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(parse_idx(&[], &LABELS), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let labels = write_idx_labels(&[1, 2, 3]);
        assert!(matches!(parse_idx(&IMAGES, &labels), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bad = IMAGES;
        bad[3] = 0x01;
        assert!(matches!(parse_idx(&bad, &LABELS), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            parse_idx(&IMAGES[..30], &LABELS),
            Err(Error::Format { offset: 30, .. })
        ));
    }

    #[test]
    fn writer_matches_fixture() {
        assert_eq!(write_idx_images(4, 2, 2, &IMAGES[16..]), IMAGES.to_vec());
        assert_eq!(write_idx_labels(&LABELS[8..]), LABELS.to_vec());
    }
}
