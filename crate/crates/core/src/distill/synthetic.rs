use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mask::MaskSpec;
use crate::data::{LabeledDataset, Normalization};
use crate::error::{Error, Result};
use crate::seeds::Rng;
use crate::store::NamedTensors;
use crate::tensor::Tensor;

/// A distilled set: `ipc` learnable rows per class, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub ipc: usize,
    pub num_classes: usize,
    /// Distillation steps applied so far.
    pub steps: usize,
    pub backbone: String,
    pub mask: Option<MaskSpec>,
    pub seed: u64,
    pub image_shape: Option<[usize; 3]>,
    pub normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
struct SyntheticMeta {
    kind: String,
    ipc: usize,
    num_classes: usize,
    steps: usize,
    backbone: String,
    mask: Option<MaskSpec>,
    seed: u64,
    image_shape: Option<[usize; 3]>,
    normalization: Option<Normalization>,
}

/// Balanced labels `[0 × ipc, 1 × ipc, …]`.
pub fn balanced_labels(num_classes: usize, ipc: usize) -> Vec<usize> {
    (0..num_classes).flat_map(|c| std::iter::repeat_n(c, ipc)).collect()
}

impl SyntheticSet {
    /// `ipc` distinct real examples per class, chosen with `rng`.
    pub fn from_real(ds: &LabeledDataset, ipc: usize, backbone: &str, seed: u64, rng: &mut Rng) -> Result<Self> {
        if ipc == 0 {
            return Err(Error::usage("images per class must be positive"));
        }
        ds.require_per_class(ipc)?;
        let mut rows = Vec::with_capacity(ipc * ds.num_classes());
        for c in 0..ds.num_classes() {
            let mut idx = ds.indices_of(c);
            idx.shuffle(rng);
            rows.extend_from_slice(&idx[..ipc]);
        }
        Ok(SyntheticSet {
            images: ds.features().select_rows(&rows),
            labels: balanced_labels(ds.num_classes(), ipc),
            ipc,
            num_classes: ds.num_classes(),
            steps: 0,
            backbone: backbone.to_string(),
            mask: None,
            seed,
            image_shape: ds.image_shape,
            normalization: ds.normalization.clone(),
        })
    }

    /// Row range of class `c`.
    pub fn class_rows(&self, c: usize) -> std::ops::Range<usize> {
        c * self.ipc..(c + 1) * self.ipc
    }

    pub fn class_block(&self, c: usize) -> Tensor {
        let r: Vec<usize> = self.class_rows(c).collect();
        self.images.select_rows(&r)
    }

    pub fn set_class_block(&mut self, c: usize, block: &Tensor) {
        let d = self.images.row_len();
        let start = c * self.ipc * d;
        self.images.data_mut()[start..start + block.len()].copy_from_slice(block.data());
    }

    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let mut ds = LabeledDataset::new(
            format!("{}-distilled", self.backbone),
            self.images.clone(),
            self.labels.clone(),
            self.num_classes,
        )?;
        if let Some(s) = self.image_shape {
            ds = ds.with_image_shape(s)?;
        }
        ds.normalization = self.normalization.clone();
        Ok(ds)
    }

    pub fn to_named(&self) -> Result<NamedTensors> {
        NamedTensors::new(
            &SyntheticMeta {
                kind: "synthetic".into(),
                ipc: self.ipc,
                num_classes: self.num_classes,
                steps: self.steps,
                backbone: self.backbone.clone(),
                mask: self.mask,
                seed: self.seed,
                image_shape: self.image_shape,
                normalization: self.normalization.clone(),
            },
            vec![("images".into(), self.images.clone())],
        )
    }

    pub fn from_named(file: &NamedTensors) -> Result<Self> {
        let meta: SyntheticMeta = file.metadata_as()?;
        let images = file
            .get("images")
            .ok_or_else(|| Error::Format {
                offset: 0,
                detail: "synthetic file has no `images` tensor".into(),
            })?
            .clone();
        if images.shape().len() != 2 || images.rows() != meta.ipc * meta.num_classes {
            return Err(Error::Format {
                offset: 0,
                detail: "image rows do not match ipc × classes".into(),
            });
        }
        Ok(SyntheticSet {
            images,
            labels: balanced_labels(meta.num_classes, meta.ipc),
            ipc: meta.ipc,
            num_classes: meta.num_classes,
            steps: meta.steps,
            backbone: meta.backbone,
            mask: meta.mask,
            seed: meta.seed,
            image_shape: meta.image_shape,
            normalization: meta.normalization,
        })
    }
}
