//! Plain SGD training and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward, Params};
use crate::autodiff::{Tape, Var};
use crate::calib::{self, losses};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds::{self, stream, Rng};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLoss {
    #[default]
    CrossEntropy,
    Focal { gamma: f64 },
    LabelSmoothing { epsilon: f64 },
    Mixup { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub loss: TrainLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 0.05,
            batch_size: 32,
            loss: TrainLoss::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy on the (possibly mixed) training batches seen this epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: Params,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub accuracy: f64,
    pub logits: Tensor,
}

/// Mean cross-entropy of fixed logits.
pub fn loss_ce(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let lp = calib::log_softmax_rows(logits, 1.0);
    let k = logits.row_len();
    let total: f64 = labels.iter().enumerate().map(|(i, &l)| -lp.data()[i * k + l]).sum();
    Ok(total / labels.len() as f64)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::dim("loss", "logit rows and label count differ"));
    }
    if labels.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= logits.row_len()) {
        return Err(Error::usage(format!("label {l} out of range for {} classes", logits.row_len())));
    }
    Ok(())
}

/// Records `loss(forward(θ; x), labels)` for one batch.
pub(crate) fn batch_loss<'t>(
    params: &Params,
    theta: &[Var<'t>],
    x: &Tensor,
    labels: &[usize],
    loss: TrainLoss,
    rng: &mut Rng,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = theta[0].tape();
    let k = params.spec.num_classes();
    match loss {
        TrainLoss::CrossEntropy => {
            let z = forward(&params.spec, theta, tape.constant(x.clone()))?;
            Ok((losses::cross_entropy_var(z, labels)?, z))
        }
        TrainLoss::Focal { gamma } => {
            let z = forward(&params.spec, theta, tape.constant(x.clone()))?;
            Ok((losses::focal_var(z, labels, gamma)?, z))
        }
        TrainLoss::LabelSmoothing { epsilon } => {
            let z = forward(&params.spec, theta, tape.constant(x.clone()))?;
            let soft = losses::smooth_labels(labels, k, epsilon)?;
            Ok((losses::soft_cross_entropy_var(z, &soft)?, z))
        }
        TrainLoss::Mixup { alpha } => {
            let soft = losses::one_hot(labels, k);
            let (xm, ym) = if x.rows() >= 2 {
                let (xm, ym, _) = losses::mixup_batch(x, &soft, alpha, rng)?;
                (xm, ym)
            } else {
                (x.clone(), soft)
            };
            let z = forward(&params.spec, theta, tape.constant(xm))?;
            Ok((losses::soft_cross_entropy_var(z, &ym)?, z))
        }
    }
}

/// Plain minibatch SGD. Batches are drawn from a fresh seeded shuffle each
/// epoch; the final batch of an epoch may be short.
pub fn sgd_train(params: &Params, ds: &LabeledDataset, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    sgd_train_observed(params, ds, cfg, seed, |_, _| {})
}

/// [`sgd_train`] calling `observe(step, θ)` after every update, where
/// `step` counts updates made in this call starting at 1.
pub fn sgd_train_observed(
    params: &Params,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &[Tensor]),
) -> Result<Trained> {
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::usage(format!("learning rate must be finite and >= 0, got {}", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    if ds.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    if ds.dim() != params.spec.input_dim() {
        return Err(Error::dim(
            "sgd_train",
            format!("dataset dim {} vs net input {}", ds.dim(), params.spec.input_dim()),
        ));
    }
    let mut shuffle_rng = seeds::rng(seed, stream::SHUFFLE);
    let mut mix_rng = seeds::rng(seed, stream::MIXUP);
    let mut values = params.values();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = params.steps;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = ds.features().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
            let diverged = || Error::Divergence { epoch, step };
            let tape = Tape::new();
            let theta: Vec<Var<'_>> = values.iter().map(|t| tape.leaf(t.clone())).collect();
            let (l, z) = batch_loss(params, &theta, &x, &labels, cfg.loss, &mut mix_rng)
                .map_err(|e| match e {
                    Error::Numeric { .. } | Error::NonFinite(_) => diverged(),
                    e => e,
                })?;
            let lv = l.item();
            if !lv.is_finite() {
                return Err(diverged());
            }
            let grads = tape.grad(l, &theta).map_err(|_| diverged())?;
            for (v, g) in values.iter_mut().zip(&grads) {
                let g = g.value();
                for (p, d) in v.data_mut().iter_mut().zip(g.data()) {
                    *p -= cfg.lr * d;
                }
                if !v.is_finite() {
                    return Err(diverged());
                }
            }
            loss_sum += lv * chunk.len() as f64;
            correct += z
                .value()
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a == b)
                .count();
            steps += 1;
            observe(steps - params.steps, &values);
        }
        metrics.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / ds.len() as f64,
            train_accuracy: correct as f64 / ds.len() as f64,
        });
    }
    let mut out = params.with_values(values)?;
    out.steps = steps;
    Ok(Trained { params: out, metrics })
}

const EVAL_CHUNK: usize = 256;

/// Argmax accuracy and the full logit matrix.
pub fn evaluate(params: &Params, ds: &LabeledDataset) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let parts = idx
        .chunks(EVAL_CHUNK)
        .map(|c| super::forward_logits(params, &ds.features().select_rows(c)))
        .collect::<Result<Vec<_>>>()?;
    let logits = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(ds.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(EvalResult {
        accuracy: correct as f64 / ds.len() as f64,
        logits,
    })
}
