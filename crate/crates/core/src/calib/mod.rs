//! Calibration metrics (reliability bins, ECE, NLL), post-hoc temperature
//! scaling with optional input masking, and training-time calibration
//! losses.

pub mod losses;
mod metrics;
mod temperature;

pub use losses::{focal_loss, mixup_batch, smooth_labels};
pub use metrics::{
    calibration_report, compute_ece, confidences, nll, reliability_bins, Bin, CalibrationReport,
    DEFAULT_BINS, OVER_CALIBRATION_TOLERANCE,
};
pub use temperature::{
    apply_temperature, fit_temperature, fit_temperature_on_logits, FitMode, FitSpec, FitTrace,
    MaskDomain, TemperatureModel, MAX_TEMPERATURE, MIN_TEMPERATURE,
};

use crate::tensor::Tensor;

/// Row-wise `log softmax(z / T)` with the row max subtracted first.
pub fn log_softmax_rows(logits: &Tensor, temperature: f64) -> Tensor {
    let k = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        for v in row.iter_mut() {
            *v /= temperature;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn softmax_rows(logits: &Tensor, temperature: f64) -> Tensor {
    log_softmax_rows(logits, temperature).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor::from_rows(&[vec![1000.0, 0.0, -3.0], vec![0.1, 0.2, 0.3]]).unwrap();
        for t in [0.5, 1.0, 7.0] {
            let p = softmax_rows(&z, t);
            for r in 0..2 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
