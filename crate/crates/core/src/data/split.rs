use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of each class (or of the whole set) drawn into validation.
    pub fraction: f64,
    pub per_class: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn per_class(fraction: f64, seed: u64) -> Self {
        SplitSpec {
            fraction,
            per_class: true,
            seed,
        }
    }
}

/// `ceil(fraction · n)`, tolerant of representation error in `fraction`.
fn take_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draws a validation sample and returns `(validation, remainder)`.
///
/// With `per_class`, each class contributes `ceil(fraction · n_c)` examples
/// picked by a seeded shuffle, so no class goes missing. When every class
/// holds exactly one example there is nothing to hold out, and both outputs
/// are the full set.
pub fn split_per_class(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::usage(format!(
            "split fraction must be in (0, 1], got {}",
            spec.fraction
        )));
    }
    let counts = ds.class_counts();
    if !ds.is_empty() && counts.iter().all(|&n| n <= 1) {
        return Ok((ds.clone(), ds.clone()));
    }
    let mut rng = seeds::rng(spec.seed, stream::SPLIT);
    let mut val = Vec::new();
    let mut rest = Vec::new();
    if spec.per_class {
        for c in 0..ds.num_classes() {
            let mut idx = ds.indices_of(c);
            if idx.is_empty() {
                continue;
            }
            idx.shuffle(&mut rng);
            let k = take_count(spec.fraction, idx.len()).max(1);
            val.extend_from_slice(&idx[..k]);
            rest.extend_from_slice(&idx[k..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let k = take_count(spec.fraction, idx.len());
        val.extend_from_slice(&idx[..k]);
        rest.extend_from_slice(&idx[k..]);
    }
    val.sort_unstable();
    rest.sort_unstable();
    Ok((ds.subset(&val), ds.subset(&rest)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn dataset(classes: usize, per: usize) -> LabeledDataset {
        let n = classes * per;
        let x = Tensor::new(vec![n, 2], (0..2 * n).map(|v| v as f64).collect()).unwrap();
        let y = (0..n).map(|i| i / per).collect();
        LabeledDataset::new("t", x, y, classes).unwrap()
    }

    #[test]
    fn ten_percent_per_class() {
        let ds = dataset(10, 50);
        let (v, r) = split_per_class(&ds, &SplitSpec::per_class(0.1, 1)).unwrap();
        assert_eq!(v.len(), 50);
        assert_eq!(v.class_counts(), vec![5; 10]);
        assert_eq!(r.len(), 450);
    }

    #[test]
    fn full_fraction_takes_everything() {
        let ds = dataset(3, 4);
        let (v, r) = split_per_class(&ds, &SplitSpec::per_class(1.0, 1)).unwrap();
        assert_eq!(v.len(), 12);
        assert!(r.is_empty());
    }

    #[test]
    fn one_per_class_returns_full_set_twice() {
        let ds = dataset(10, 1);
        let (v, r) = split_per_class(&ds, &SplitSpec::per_class(0.1, 1)).unwrap();
        assert_eq!(v, ds);
        assert_eq!(r, ds);
    }

    #[test]
    fn bad_fraction() {
        let ds = dataset(2, 3);
        for f in [0.0, -0.1, 1.5] {
            assert!(matches!(
                split_per_class(&ds, &SplitSpec::per_class(f, 0)),
                Err(Error::Usage(_))
            ));
        }
    }
}
