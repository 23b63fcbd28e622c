//! Diagnostics: SVD truncation of datasets, explained-ratio curves,
//! max-logit concentration, and in/out-of-distribution confidence.

mod logits;
mod svd;

pub use logits::{max_logit_stats, ood_confidence_compare, Histogram, LogitStats, OodReport};
pub use svd::{
    explained_ratio, singular_values, svd_accuracy_sweep, svd_truncate, svd_truncate_dataset, SvdLayout,
    SvdSweepResult,
};

/// Mean and sample (`n − 1`) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
