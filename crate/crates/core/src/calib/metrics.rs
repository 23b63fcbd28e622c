use serde::{Deserialize, Serialize};

use super::{log_softmax_rows, softmax_rows};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 15;
/// A method over-calibrates when its signed gap falls below minus this.
pub const OVER_CALIBRATION_TOLERANCE: f64 = 0.01;

/// One reliability bin `(lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// 0 for an empty bin.
    pub mean_confidence: f64,
    /// 0 for an empty bin.
    pub accuracy: f64,
}

fn upper_edge(m: usize, num_bins: usize) -> f64 {
    (m + 1) as f64 / num_bins as f64
}

/// Index of the right-closed bin holding `c`; `c = 0` goes to the first bin.
fn bin_index(c: f64, num_bins: usize) -> usize {
    let mut m = ((c * num_bins as f64).ceil() as usize).clamp(1, num_bins) - 1;
    while m > 0 && c <= upper_edge(m - 1, num_bins) {
        m -= 1;
    }
    while m + 1 < num_bins && c > upper_edge(m, num_bins) {
        m += 1;
    }
    m
}

/// Equal-width bins over `(0, 1]`.
pub fn reliability_bins(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<Vec<Bin>> {
    if num_bins == 0 {
        return Err(Error::usage("need at least one bin"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::dim("reliability_bins", "confidence and correctness lengths differ"));
    }
    let mut conf_sum = vec![0.0; num_bins];
    let mut hit = vec![0usize; num_bins];
    let mut count = vec![0usize; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::usage(format!("confidence {c} outside [0, 1]")));
        }
        let m = bin_index(c, num_bins);
        conf_sum[m] += c;
        hit[m] += ok as usize;
        count[m] += 1;
    }
    Ok((0..num_bins)
        .map(|m| {
            let n = count[m];
            let (mean_confidence, accuracy) = if n == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[m] / n as f64, hit[m] as f64 / n as f64)
            };
            Bin {
                lower: m as f64 / num_bins as f64,
                upper: upper_edge(m, num_bins),
                count: n,
                mean_confidence,
                accuracy,
            }
        })
        .collect())
}

/// `Σ_m (count_m / n)·|conf_m − acc_m|`; 0 when `n = 0`.
pub fn compute_ece(bins: &[Bin], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.mean_confidence - b.accuracy).abs())
        .sum()
}

/// Mean `−log softmax(z/T)[label]`.
pub fn nll(logits: &Tensor, labels: &[usize], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::usage(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::dim("nll", "logit rows and label count differ"));
    }
    if labels.is_empty() {
        return Err(Error::usage("nll of an empty set"));
    }
    let k = logits.row_len();
    let lp = log_softmax_rows(logits, temperature);
    Ok(labels.iter().enumerate().map(|(i, &l)| -lp.data()[i * k + l]).sum::<f64>() / labels.len() as f64)
}

/// Max probability and argmax of every row.
pub fn confidences(probs: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let pred = probs.argmax_rows();
    let conf = pred.iter().enumerate().map(|(i, &p)| probs.row(i)[p]).collect();
    (conf, pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub method: String,
    pub temperature: f64,
    pub mask_ratio: Option<f64>,
    pub seed: Option<u64>,
    pub n: usize,
    pub bins: Vec<Bin>,
    pub ece: f64,
    /// Mean confidence minus accuracy; negative means under-confident.
    pub signed_gap: f64,
    pub nll: f64,
    pub accuracy: f64,
}

impl CalibrationReport {
    pub fn over_calibrated(&self) -> bool {
        self.signed_gap < -OVER_CALIBRATION_TOLERANCE
    }
}

/// Reliability statistics of `softmax(logits / T)` against `labels`.
pub fn calibration_report(
    logits: &Tensor,
    labels: &[usize],
    temperature: f64,
    num_bins: usize,
    method: &str,
) -> Result<CalibrationReport> {
    let nll = nll(logits, labels, temperature)?;
    let (conf, pred) = confidences(&softmax_rows(logits, temperature));
    let correct: Vec<bool> = pred.iter().zip(labels).map(|(p, l)| p == l).collect();
    let bins = reliability_bins(&conf, &correct, num_bins)?;
    let n = labels.len();
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    let mean_conf = conf.iter().sum::<f64>() / n as f64;
    Ok(CalibrationReport {
        method: method.to_string(),
        temperature,
        mask_ratio: None,
        seed: None,
        n,
        ece: compute_ece(&bins, n),
        bins,
        signed_gap: mean_conf - accuracy,
        nll,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_sample_hand_case() {
        let bins =
            reliability_bins(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, true], DEFAULT_BINS).unwrap();
        let full: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(full.len(), 2);
        assert!((full[0].mean_confidence - 0.6).abs() < 1e-15 && full[0].accuracy == 1.0);
        assert!((full[1].mean_confidence - 0.9).abs() < 1e-15 && full[1].accuracy == 0.5);
        assert!((compute_ece(&bins, 4) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn edge_placement() {
        let bins = reliability_bins(&[0.95; 3], &[true; 3], 15).unwrap();
        assert_eq!(bins[14].count, 3);
        let bins = reliability_bins(&[0.0, 1.0, 0.5], &[true; 3], 2).unwrap();
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[1].count, 1);
        assert!(reliability_bins(&[1.01], &[true], 15).is_err());
        let empty = reliability_bins(&[], &[], 15).unwrap();
        assert_eq!(compute_ece(&empty, 0), 0.0);
    }

    #[test]
    fn all_certain_gives_one_minus_accuracy() {
        let bins = reliability_bins(&[1.0; 4], &[true, false, true, true], 15).unwrap();
        assert!((compute_ece(&bins, 4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn nll_cases() {
        let z = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let e = 1f64.exp();
        assert!((nll(&z, &[0], 2.0).unwrap() + (e / (e + 1.0)).ln()).abs() < 1e-12);
        let z = Tensor::from_rows(&[vec![3.0, -1.0, 0.5, 2.0]]).unwrap();
        assert!((nll(&z, &[1], 1e6).unwrap() - 4f64.ln()).abs() < 1e-5);
        assert!(nll(&z, &[1], 0.0).is_err());
    }
}
