//! Training-time calibration losses: cross-entropy variants, focal loss,
//! label smoothing, and mixup.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use super::log_softmax_rows;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::seeds::Rng;
use crate::tensor::Tensor;

/// One-hot `[B × K]` matrix.
pub fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = 1.0;
    }
    t
}

/// Mean cross-entropy of `logits [B × K]` against soft targets.
pub fn soft_cross_entropy_var<'t>(logits: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    let b = logits.shape()[0] as f64;
    let t = logits.tape().constant(targets.clone());
    t.mul(logits.log_softmax_rows()?)?.sum()?.scale(-1.0 / b)
}

pub fn cross_entropy_var<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let k = logits.shape()[1];
    soft_cross_entropy_var(logits, &one_hot(labels, k))
}

/// Mean of `−(1 − p)^γ · log p` with `p` the true-class probability.
pub fn focal_var<'t>(logits: Var<'t>, labels: &[usize], gamma: f64) -> Result<Var<'t>> {
    if gamma < 0.0 {
        return Err(Error::usage(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let k = logits.shape()[1];
    let onehot = logits.tape().constant(one_hot(labels, k));
    let logp = onehot.mul(logits.log_softmax_rows()?)?.row_sums()?;
    let weighted = if gamma == 0.0 {
        logp
    } else {
        let w = logp.exp()?.neg()?.shift(1.0)?.powf(gamma)?;
        w.mul(logp)?
    };
    weighted.mean()?.neg()
}

/// Focal loss on fixed logits.
pub fn focal_loss(logits: &Tensor, labels: &[usize], gamma: f64) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::usage(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let lp = log_softmax_rows(logits, 1.0);
    let k = logits.shape()[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let logp = lp.data()[i * k + l];
            let p = logp.exp();
            let w = if gamma == 0.0 { 1.0 } else { (1.0 - p).max(0.0).powf(gamma) };
            -w * logp
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `(1 − ε + ε/K)` on the true class and `ε/K` elsewhere.
pub fn smooth_labels(labels: &[usize], k: usize, epsilon: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::usage(format!("smoothing epsilon must be in [0, 1), got {epsilon}")));
    }
    let off = epsilon / k as f64;
    let on = 1.0 - epsilon + off;
    let mut t = Tensor::full(&[labels.len(), k], off);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = on;
    }
    Ok(t)
}

/// `λ·x_i + (1 − λ)·x_perm[i]` for both inputs and soft labels.
pub fn mix_pairs(batch: &Tensor, soft: &Tensor, lambda: f64, perm: &[usize]) -> Result<(Tensor, Tensor)> {
    if batch.rows() != soft.rows() || perm.len() != batch.rows() {
        return Err(Error::dim("mixup", "batch, labels and permutation lengths differ"));
    }
    let mix = |t: &Tensor| {
        let partner = t.select_rows(perm);
        t.zip_map(&partner, |a, b| lambda * a + (1.0 - lambda) * b)
    };
    Ok((mix(batch)?, mix(soft)?))
}

/// Draws `λ ~ Beta(α, α)` and a seeded pairing permutation, then mixes.
pub fn mixup_batch(batch: &Tensor, soft: &Tensor, alpha: f64, rng: &mut Rng) -> Result<(Tensor, Tensor, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::usage(format!("mixup alpha must be > 0, got {alpha}")));
    }
    if batch.rows() < 2 {
        return Err(Error::usage("mixup needs at least two examples"));
    }
    let lambda = sample_mix_ratio(alpha, rng)?;
    let mut perm: Vec<usize> = (0..batch.rows()).collect();
    perm.shuffle(rng);
    let (x, y) = mix_pairs(batch, soft, lambda, &perm)?;
    Ok((x, y, lambda))
}

pub fn sample_mix_ratio(alpha: f64, rng: &mut Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::usage(e.to_string()))?;
    Ok(beta.sample(rng))
}
