//! Labeled datasets: loaders, synthetic generators, splits, normalization.

mod blobs;
mod cifar;
mod idx;
mod normalize;
mod split;

use serde::{Deserialize, Serialize};

pub use blobs::{gen_blobs, gen_uniform_noise, BlobSpec, Blobs};
pub use cifar::{load_cifar10_bin, parse_cifar10_bin, write_cifar10_bin, CIFAR_RECORD_BYTES};
pub use idx::{load_idx, parse_idx, write_idx_images, write_idx_labels};
pub use normalize::{apply_normalization, normalize_dataset, STD_FLOOR};
pub use split::{split_per_class, SplitSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `N × D` examples with integer labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    /// `(channels, height, width)` when the rows are flattened images.
    pub image_shape: Option<[usize; 3]>,
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim(
                "dataset",
                format!("features must be N × D, got {:?}", features.shape()),
            ));
        }
        if features.rows() != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} rows but {} labels", features.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            name: name.into(),
            features,
            labels,
            num_classes,
            image_shape: None,
            normalization: None,
        })
    }

    pub fn with_image_shape(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.dim() {
            return Err(Error::dim("dataset", "image shape does not match row length"));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features per example.
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the examples labeled `class`, in dataset order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// The examples at `idx`, keeping metadata.
    pub fn subset(&self, idx: &[usize]) -> Self {
        LabeledDataset {
            name: self.name.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
            normalization: self.normalization.clone(),
        }
    }

    /// Same labels and metadata with new feature values of identical shape.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::dim("dataset", "replacement features change shape"));
        }
        Ok(LabeledDataset {
            features,
            ..self.clone()
        })
    }

    /// Requires at least `per_class` examples of every class.
    pub fn require_per_class(&self, per_class: usize) -> Result<()> {
        for (c, n) in self.class_counts().into_iter().enumerate() {
            if n < per_class {
                return Err(Error::usage(format!(
                    "class {c} has {n} examples, need at least {per_class}"
                )));
            }
        }
        Ok(())
    }
}
