use serde::{Deserialize, Serialize};

use super::mean_sd;
use crate::calib::{apply_temperature, confidences, TemperatureModel};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{forward_logits, Params};
use crate::tensor::Tensor;

/// Equal-width histogram; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::usage("histogram needs bins >= 1 and hi > lo"));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitStats {
    pub max_logits: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    pub histogram: Histogram,
}

/// Per-row maximum logit with summary statistics and a histogram over
/// `[min, max]` (widened by 1 when all maxima coincide).
pub fn max_logit_stats(logits: &Tensor, bins: usize) -> Result<LogitStats> {
    if logits.shape().len() != 2 || logits.rows() < 2 {
        return Err(Error::usage("max-logit statistics need at least two rows"));
    }
    let max_logits: Vec<f64> = (0..logits.rows())
        .map(|r| logits.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (mean, sd) = mean_sd(&max_logits);
    let lo = max_logits.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = max_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    Ok(LogitStats {
        histogram: Histogram::new(&max_logits, lo, hi, bins)?,
        max_logits,
        mean,
        sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub mean_confidence_id: f64,
    pub mean_confidence_ood: f64,
    /// In-distribution minus out-of-distribution mean confidence.
    pub separation: f64,
    pub temperature: f64,
    pub histogram_id: Histogram,
    pub histogram_ood: Histogram,
}

/// Max softmax probability on an in-distribution and an OOD set.
pub fn ood_confidence_compare(
    params: &Params,
    id_set: &LabeledDataset,
    ood_set: &LabeledDataset,
    temperature: Option<&TemperatureModel>,
    bins: usize,
) -> Result<OodReport> {
    if id_set.is_empty() || ood_set.is_empty() {
        return Err(Error::usage("both sets must be nonempty"));
    }
    if id_set.dim() != ood_set.dim() || id_set.dim() != params.spec.input_dim() {
        return Err(Error::usage(format!(
            "dimension mismatch: network {}, ID {}, OOD {}",
            params.spec.input_dim(),
            id_set.dim(),
            ood_set.dim()
        )));
    }
    let identity = TemperatureModel::identity();
    let model = temperature.unwrap_or(&identity);
    let conf = |ds: &LabeledDataset| -> Result<Vec<f64>> {
        let z = forward_logits(params, ds.features())?;
        Ok(confidences(&apply_temperature(&z, model)?).0)
    };
    let (id, ood) = (conf(id_set)?, conf(ood_set)?);
    let (mi, _) = mean_sd(&id);
    let (mo, _) = mean_sd(&ood);
    Ok(OodReport {
        mean_confidence_id: mi,
        mean_confidence_ood: mo,
        separation: mi - mo,
        temperature: model.temperature,
        histogram_id: Histogram::new(&id, 0.0, 1.0, bins)?,
        histogram_ood: Histogram::new(&ood, 0.0, 1.0, bins)?,
    })
}
