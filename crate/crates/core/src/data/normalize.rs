use super::{LabeledDataset, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on a feature's standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Standardizes every feature to zero mean and unit (population) variance
/// and records the constants for reuse on held-out data.
pub fn normalize_dataset(ds: &LabeledDataset) -> Result<LabeledDataset> {
    if ds.normalization.is_some() {
        return Err(Error::usage(format!("dataset `{}` is already normalized", ds.name)));
    }
    if ds.is_empty() {
        return Err(Error::usage("cannot normalize an empty dataset"));
    }
    let (n, d) = (ds.len(), ds.dim());
    let x = ds.features();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
    apply_normalization(ds, &Normalization { mean, std })
}

/// Applies stored constants (e.g. from the training split) to `ds`.
pub fn apply_normalization(ds: &LabeledDataset, norm: &Normalization) -> Result<LabeledDataset> {
    if ds.normalization.is_some() {
        return Err(Error::usage(format!("dataset `{}` is already normalized", ds.name)));
    }
    let d = ds.dim();
    if norm.mean.len() != d || norm.std.len() != d {
        return Err(Error::dim("normalize", "constants do not match feature count"));
    }
    let x = ds.features();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let j = i % d;
            (v - norm.mean[j]) / norm.std[j]
        })
        .collect();
    let mut out = ds.with_features(Tensor::new(x.shape().to_vec(), data)?)?;
    out.normalization = Some(norm.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[Vec<f64>]) -> LabeledDataset {
        let n = rows.len();
        LabeledDataset::new("t", Tensor::from_rows(rows).unwrap(), vec![0; n], 1).unwrap()
    }

    #[test]
    fn standardizes_and_refuses_twice() {
        let d = ds(&[vec![1.0, 10.0], vec![3.0, 20.0], vec![5.0, 60.0]]);
        let n = normalize_dataset(&d).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| n.features().row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / 3.0;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(matches!(normalize_dataset(&n), Err(Error::Usage(_))));
    }

    #[test]
    fn already_standard_data_is_unchanged() {
        let s = (1.5f64).sqrt();
        let d = ds(&[vec![-s, 0.0], vec![0.0, 0.0], vec![s, 0.0]]);
        let n = normalize_dataset(&d).unwrap();
        // the constant column maps to 0; the other is already standard
        for i in 0..3 {
            assert!((n.features().row(i)[0] - d.features().row(i)[0]).abs() < 1e-12);
            assert_eq!(n.features().row(i)[1], 0.0);
        }
    }
}
