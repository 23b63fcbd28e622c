use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::mean_sd;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{evaluate, init_params, sgd_train, NetSpec, TrainConfig};
use crate::tensor::Tensor;

const SVD_MAX_ITERATIONS: usize = 10_000;

/// Which matrix the SVD is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SvdLayout {
    /// One `N × D` matrix of flattened examples.
    #[default]
    Dataset,
    /// One `N × (H·W)` matrix per image channel.
    PerChannel,
}

fn decompose(x: &Tensor) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let m = DMatrix::from_row_slice(x.rows(), x.row_len(), x.data());
    SVD::try_new(m, true, true, 5.0 * f64::EPSILON, SVD_MAX_ITERATIONS).ok_or(Error::Numeric {
        op: "svd",
        node: 0,
    })
}

/// Indices of the singular values in descending order.
fn descending(sv: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    idx
}

fn numerical_rank(sv: &[f64], rows: usize, cols: usize) -> usize {
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * rows.max(cols) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Singular values of an `N × D` matrix, largest first.
pub fn singular_values(x: &Tensor) -> Result<Vec<f64>> {
    if x.shape().len() != 2 {
        return Err(Error::dim("svd", "expected an N × D matrix"));
    }
    let svd = decompose(x)?;
    let sv = svd.singular_values.as_slice().to_vec();
    Ok(descending(&sv).into_iter().map(|i| sv[i]).collect())
}

/// Reconstructs `x` with its largest `⌈fraction · rank⌉` singular values
/// set to zero.
pub fn svd_truncate(x: &Tensor, drop_fraction: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::usage(format!("drop fraction must be in [0, 1), got {drop_fraction}")));
    }
    if x.shape().len() != 2 {
        return Err(Error::dim("svd_truncate", "expected an N × D matrix"));
    }
    let (n, d) = (x.rows(), x.row_len());
    let svd = decompose(x)?;
    let sv = svd.singular_values.as_slice();
    let rank = numerical_rank(sv, n, d);
    let drop = (drop_fraction * rank as f64 - 1e-9).ceil().max(0.0) as usize;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::<f64>::zeros(n, d);
    for &i in descending(sv).iter().skip(drop) {
        if sv[i] == 0.0 {
            continue;
        }
        out += sv[i] * u.column(i) * vt.row(i);
    }
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        data.extend(out.row(r).iter());
    }
    Tensor::new(vec![n, d], data)
}

/// [`svd_truncate`] on a dataset's features; labels and metadata unchanged.
pub fn svd_truncate_dataset(ds: &LabeledDataset, drop_fraction: f64, layout: SvdLayout) -> Result<LabeledDataset> {
    let x = ds.features();
    let out = match layout {
        SvdLayout::Dataset => svd_truncate(x, drop_fraction)?,
        SvdLayout::PerChannel => {
            let [c, h, w] = ds
                .image_shape
                .ok_or_else(|| Error::usage("per-channel SVD needs an image shape"))?;
            let plane = h * w;
            let n = ds.len();
            let mut data = vec![0.0; n * c * plane];
            for ch in 0..c {
                let mut block = Vec::with_capacity(n * plane);
                for r in 0..n {
                    block.extend_from_slice(&x.row(r)[ch * plane..(ch + 1) * plane]);
                }
                let t = svd_truncate(&Tensor::new(vec![n, plane], block)?, drop_fraction)?;
                for r in 0..n {
                    let dst = r * c * plane + ch * plane;
                    data[dst..dst + plane].copy_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![n, c * plane], data)?
        }
    };
    ds.with_features(out)
}

/// Cumulative share of the singular-value sum carried by the top
/// components; one entry per singular value.
pub fn explained_ratio(x: &Tensor) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::usage("explained ratio of an empty matrix"));
    }
    let sv = singular_values(x)?;
    let total: f64 = sv.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = sv
        .iter()
        .map(|s| {
            acc += s;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdSweepResult {
    pub tag: String,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `accuracies[f][s]`: fraction `f`, seed `s`.
    pub accuracies: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl SvdSweepResult {
    /// Accuracy at fraction 0 minus accuracy at `fraction`, per seed.
    pub fn drop_at(&self, fraction: f64) -> Option<Vec<f64>> {
        let i = self.fractions.iter().position(|&f| (f - fraction).abs() < 1e-12)?;
        Some(
            self.accuracies[0]
                .iter()
                .zip(&self.accuracies[i])
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(["tag", "fraction", "seed", "accuracy"]).map_err(ser)?;
        for (f, row) in self.fractions.iter().zip(&self.accuracies) {
            for (s, a) in self.seeds.iter().zip(row) {
                w.write_record([self.tag.clone(), f.to_string(), s.to_string(), a.to_string()])
                    .map_err(ser)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)
            .map_err(|e| Error::Serde(e.to_string()))
    }
}

/// For every fraction and seed: truncate, train from scratch, evaluate.
#[allow(clippy::too_many_arguments)]
pub fn svd_accuracy_sweep(
    tag: &str,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    fractions: &[f64],
    layout: SvdLayout,
    net: &NetSpec,
    train: &TrainConfig,
    seeds: &[u64],
) -> Result<SvdSweepResult> {
    if fractions.first() != Some(&0.0) || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::usage("fractions must start at 0 and increase"));
    }
    if seeds.is_empty() {
        return Err(Error::usage("sweep needs at least one seed"));
    }
    let mut accuracies = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let truncated = if f == 0.0 {
            train_set.clone()
        } else {
            svd_truncate_dataset(train_set, f, layout)?
        };
        let row = seeds
            .iter()
            .map(|&s| {
                let p = init_params(net, s)?;
                let trained = sgd_train(&p, &truncated, train, s)?;
                Ok(evaluate(&trained.params, test_set)?.accuracy)
            })
            .collect::<Result<Vec<_>>>()?;
        accuracies.push(row);
    }
    let (mean, sd) = accuracies.iter().map(|r| mean_sd(r)).unzip();
    Ok(SvdSweepResult {
        tag: tag.to_string(),
        fractions: fractions.to_vec(),
        seeds: seeds.to_vec(),
        accuracies,
        mean,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn zero_fraction_reconstructs() {
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert!(svd_truncate(&x, 0.0).unwrap().max_abs_diff(&x) < 1e-8);
    }

    #[test]
    fn rank_one_vanishes() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 0.0, 2.0];
        let x = Tensor::new(vec![3, 4], u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()).unwrap();
        let t = svd_truncate(&x, 0.5).unwrap();
        assert!(t.data().iter().all(|v| v.abs() < 1e-8));
        let r = explained_ratio(&x).unwrap();
        assert!(r.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn eckart_young_identity() {
        let x = Tensor::new(vec![10, 6], (0..60).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()).unwrap();
        let sv = singular_values(&x).unwrap();
        for (frac, k) in [(0.2, 2), (0.5, 3)] {
            let t = svd_truncate(&x, frac).unwrap();
            let dropped: f64 = sv[..k].iter().map(|s| s * s).sum();
            assert!((frob(&x, &t) - dropped).abs() < 1e-8);
        }
    }

    #[test]
    fn equal_singular_values() {
        let mut x = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            x.data_mut()[i * 4 + i] = 2.0;
        }
        let r = explained_ratio(&x).unwrap();
        for (a, b) in r.iter().zip([0.25, 0.5, 0.75, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(explained_ratio(&Tensor::zeros(&[2, 2])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn per_channel_layout_keeps_shape() {
        let x = Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64).cos()).collect()).unwrap();
        let ds = LabeledDataset::new("t", x, vec![0, 1, 0], 2)
            .unwrap()
            .with_image_shape([2, 2, 2])
            .unwrap();
        let out = svd_truncate_dataset(&ds, 0.0, SvdLayout::PerChannel).unwrap();
        let e = out.features().max_abs_diff(ds.features());
        assert!(e < 1e-8, "{e} {:?} {:?}", out.features(), ds.features());
        assert_eq!(out.labels(), ds.labels());
    }
}
