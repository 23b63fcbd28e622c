//! Binary zero-masks over flattened examples.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Fixed,
    /// Draws the ratio from `U(lo, hi)` for every mask.
    DynamicUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ratio: f64,
    #[serde(default)]
    pub mode: MaskMode,
}

impl MaskSpec {
    pub fn fixed(ratio: f64) -> Self {
        MaskSpec {
            ratio,
            mode: MaskMode::Fixed,
        }
    }

    pub fn dynamic(lo: f64, hi: f64) -> Self {
        MaskSpec {
            ratio: hi,
            mode: MaskMode::DynamicUniform { lo, hi },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |r: f64| (0.0..=1.0).contains(&r);
        match self.mode {
            MaskMode::Fixed if !unit(self.ratio) => Err(Error::usage(format!(
                "mask ratio must be in [0, 1], got {}",
                self.ratio
            ))),
            MaskMode::DynamicUniform { lo, hi } if !(unit(lo) && unit(hi) && lo <= hi) => Err(
                Error::usage(format!("dynamic mask range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})")),
            ),
            _ => Ok(()),
        }
    }

    /// True when no mask this spec generates can contain a zero.
    pub fn is_identity(&self) -> bool {
        match self.mode {
            MaskMode::Fixed => self.ratio == 0.0,
            MaskMode::DynamicUniform { hi, .. } => hi == 0.0,
        }
    }
}

/// Number of zeros in a `d`-coordinate mask at ratio `r`.
pub fn mask_zero_count(r: f64, d: usize) -> usize {
    ((r * d as f64 + 1e-9).floor() as usize).min(d)
}

/// One mask of length `d` with exactly `⌊r·d⌋` zeros at uniformly chosen
/// positions.
pub fn make_mask(d: usize, spec: &MaskSpec, rng: &mut Rng) -> Result<Tensor> {
    spec.validate()?;
    let r = match spec.mode {
        MaskMode::Fixed => spec.ratio,
        MaskMode::DynamicUniform { lo, hi } if lo < hi => rng.gen_range(lo..hi),
        MaskMode::DynamicUniform { lo, .. } => lo,
    };
    let mut m = vec![1.0; d];
    let zeros = mask_zero_count(r, d);
    if zeros > 0 {
        for i in index::sample(rng, d, zeros) {
            m[i] = 0.0;
        }
    }
    Ok(Tensor::vector(m))
}

/// `rows` independent masks stacked into `[rows × d]`.
pub fn make_masks(rows: usize, d: usize, spec: &MaskSpec, rng: &mut Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        data.extend(make_mask(d, spec, rng)?.into_data());
    }
    Tensor::new(vec![rows, d], data)
}

/// Elementwise product of a batch with its masks.
pub fn apply_mask(batch: &Tensor, masks: &Tensor) -> Result<Tensor> {
    if batch.shape() != masks.shape() {
        return Err(Error::dim(
            "apply_mask",
            format!("batch {:?} vs masks {:?}", batch.shape(), masks.shape()),
        ));
    }
    batch.zip_map(masks, |x, m| x * m)
}

/// Masks every row of `batch` with a fresh mask, or returns it unchanged
/// when the spec is absent or cannot zero anything.
pub fn mask_batch(batch: &Tensor, spec: Option<&MaskSpec>, rng: &mut Rng) -> Result<Tensor> {
    match spec {
        Some(s) if !s.is_identity() => {
            let m = make_masks(batch.rows(), batch.row_len(), s, rng)?;
            apply_mask(batch, &m)
        }
        Some(s) => {
            s.validate()?;
            Ok(batch.clone())
        }
        None => Ok(batch.clone()),
    }
}
