//! Isotropic Gaussian class clusters.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds::{self, stream};
use crate::tensor::Tensor;

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dims: usize,
    /// Per-coordinate standard deviation σ of each cluster.
    pub spread: f64,
    /// Per-coordinate standard deviation of the random class centers.
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
}

fn default_center_scale() -> f64 {
    1.0
}

/// Class centers drawn once per seed; any number of samples can then be
/// drawn around them (training and test sets share centers).
#[derive(Debug, Clone)]
pub struct Blobs {
    pub spec: BlobSpec,
    pub centers: Vec<Vec<f64>>,
}

impl Blobs {
    /// Draws centers from `N(0, center_scale²·I)`, rejecting any center
    /// closer than `4σ` to an earlier one.
    pub fn new(spec: BlobSpec, seed: u64) -> Result<Self> {
        if spec.classes < 2 || spec.dims < 2 {
            return Err(Error::Config(format!(
                "blobs need K >= 2 and D >= 2, got K={} D={}",
                spec.classes, spec.dims
            )));
        }
        if !(spec.spread >= 0.0) || !(spec.center_scale > 0.0) {
            return Err(Error::Config("blob spread must be >= 0 and center scale > 0".into()));
        }
        let mut rng = seeds::rng(seed, stream::DATA);
        let min_dist = 4.0 * spec.spread;
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        for c in 0..spec.classes {
            let mut placed = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let cand: Vec<f64> = (0..spec.dims)
                    .map(|_| spec.center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let ok = centers.iter().all(|o| {
                    o.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist
                });
                if ok {
                    centers.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Config(format!(
                    "could not place center {c} at distance >= {min_dist} after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )));
            }
        }
        Ok(Blobs { spec, centers })
    }

    /// `per_class` examples of each class, class-major order.
    pub fn sample(&self, per_class: usize, rng: &mut seeds::Rng) -> Result<LabeledDataset> {
        let (k, d) = (self.spec.classes, self.spec.dims);
        let mut data = Vec::with_capacity(k * per_class * d);
        let mut labels = Vec::with_capacity(k * per_class);
        for (c, center) in self.centers.iter().enumerate() {
            for _ in 0..per_class {
                data.extend(
                    center
                        .iter()
                        .map(|&m| m + self.spec.spread * rng.sample::<f64, _>(StandardNormal)),
                );
                labels.push(c);
            }
        }
        let features = Tensor::new(vec![k * per_class, d], data)?;
        LabeledDataset::new("blobs", features, labels, k)
    }
}

/// `K · per_class` blob examples; centers and samples are both determined by
/// `seed`.
pub fn gen_blobs(spec: &BlobSpec, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let blobs = Blobs::new(spec.clone(), seed)?;
    blobs.sample(per_class, &mut seeds::rng(seed, stream::TEST_DATA + 100))
}

/// Uniform noise in `[lo, hi)`, labeled 0 (labels are meaningless here).
pub fn gen_uniform_noise(n: usize, dims: usize, lo: f64, hi: f64, num_classes: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = seeds::rng(seed, stream::OOD);
    let dist = Uniform::new(lo, hi);
    let data: Vec<f64> = (0..n * dims).map(|_| dist.sample(&mut rng)).collect();
    LabeledDataset::new(
        "uniform-noise",
        Tensor::new(vec![n, dims], data)?,
        vec![0; n],
        num_classes.max(1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(spread: f64) -> BlobSpec {
        BlobSpec {
            classes: 3,
            dims: 4,
            spread,
            center_scale: 2.0,
        }
    }

    #[test]
    fn balanced_and_deterministic() {
        let a = gen_blobs(&spec(0.5), 100, 11).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.class_counts(), vec![100, 100, 100]);
        assert_eq!(a, gen_blobs(&spec(0.5), 100, 11).unwrap());
        assert_ne!(a, gen_blobs(&spec(0.5), 100, 12).unwrap());
    }

    #[test]
    fn zero_spread_collapses_onto_centers() {
        let blobs = Blobs::new(spec(0.0), 3).unwrap();
        let ds = blobs.sample(5, &mut seeds::rng(3, 0)).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features().row(i), blobs.centers[ds.labels()[i]].as_slice());
        }
    }

    #[test]
    fn centers_respect_separation() {
        let b = Blobs::new(spec(0.4), 5).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let d: f64 = b.centers[i]
                    .iter()
                    .zip(&b.centers[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 1.6);
            }
        }
    }

    #[test]
    fn impossible_placement_is_config_error() {
        let s = BlobSpec {
            classes: 10,
            dims: 2,
            spread: 100.0,
            center_scale: 0.01,
        };
        assert!(matches!(Blobs::new(s, 1), Err(Error::Config(_))));
        assert!(Blobs::new(BlobSpec { classes: 1, ..spec(1.0) }, 1).is_err());
    }
}
