//! CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixel bytes.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<LabeledDataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let whole = bytes.len() - bytes.len() % CIFAR_RECORD_BYTES;
        return Err(Error::Format {
            offset: whole as u64,
            detail: format!(
                "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Format {
                offset: (i * CIFAR_RECORD_BYTES) as u64,
                detail: format!("label byte {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let features = Tensor::new(vec![n, PIXELS], pixels)?;
    LabeledDataset::new("cifar10", features, labels, 10)?.with_image_shape([3, 32, 32])
}

pub fn load_cifar10_bin(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let p = path.as_ref();
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    parse_cifar10_bin(&bytes)
}

/// Encodes `(label, 3072 pixel bytes)` records.
pub fn write_cifar10_bin(records: &[(u8, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for (label, px) in records {
        if px.len() != PIXELS {
            return Err(Error::usage(format!("record has {} pixel bytes", px.len())));
        }
        out.push(*label);
        out.extend_from_slice(px);
    }
    Ok(out)
}
