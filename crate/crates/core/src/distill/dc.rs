//! Gradient matching: the synthetic batch of each class is moved so that
//! the parameter gradient it induces matches that of a real batch.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::mask::{self, MaskSpec};
use super::synthetic::SyntheticSet;
use crate::autodiff::{meta_grad, MetaObjective, MetaRoute, Tape, Var};
use crate::calib::losses::cross_entropy_var;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{forward, init_params, NetSpec, Params};
use crate::seeds::{self, stream, Rng};
use crate::tensor::Tensor;

/// Which batch the distillation mask is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskTarget {
    #[default]
    Synthetic,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcConfig {
    pub ipc: usize,
    pub steps: usize,
    pub synthetic_lr: f64,
    /// Real examples per class in each matching batch.
    pub real_batch: usize,
    /// Learning rate of the network update on real data after each step.
    pub net_lr: f64,
    pub net_steps: usize,
    /// Network re-initialization period, in outer steps.
    pub reinit_every: usize,
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub mask_target: MaskTarget,
}

impl Default for DcConfig {
    fn default() -> Self {
        DcConfig {
            ipc: 10,
            steps: 200,
            synthetic_lr: 0.1,
            real_batch: 32,
            net_lr: 0.01,
            net_steps: 1,
            reinit_every: 50,
            mask: None,
            mask_target: MaskTarget::Synthetic,
        }
    }
}

/// `‖∇θ ℓ(θ; B) − ∇θ ℓ(θ; s ⊙ m)‖` as a function of the synthetic rows `s`.
pub struct DcObjective {
    pub spec: NetSpec,
    pub theta: Vec<Tensor>,
    pub real: Tensor,
    pub real_labels: Vec<usize>,
    pub syn_labels: Vec<usize>,
    /// Fixed mask for the synthetic rows, if any.
    pub syn_mask: Option<Tensor>,
}

impl MetaObjective for DcObjective {
    fn build<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Var<'t>> {
        if self.real_labels.is_empty() || self.syn_labels.is_empty() {
            return Err(Error::usage("gradient matching needs nonempty batches"));
        }
        let theta: Vec<Var<'t>> = self.theta.iter().map(|t| tape.leaf(t.clone())).collect();
        let zr = forward(&self.spec, &theta, tape.constant(self.real.clone()))?;
        let gr = tape.grad(cross_entropy_var(zr, &self.real_labels)?, &theta)?;
        let xs = match &self.syn_mask {
            Some(m) => s.mul(tape.constant(m.clone()))?,
            None => s,
        };
        let zs = forward(&self.spec, &theta, xs)?;
        let gs = tape.grad(cross_entropy_var(zs, &self.syn_labels)?, &theta)?;
        let mut total: Option<Var<'t>> = None;
        for (a, b) in gs.iter().zip(&gr) {
            let d = a.sub(b.detach())?.sq_norm()?;
            total = Some(match total {
                Some(t) => t.add(d)?,
                None => d,
            });
        }
        total.expect("networks have parameters").sqrt()
    }
}

/// Gradient-matching distance between a real and a synthetic batch; the
/// synthetic batch is masked with a fresh mask per row when `mask` is set.
#[allow(clippy::too_many_arguments)]
pub fn dc_loss(
    params: &Params,
    real: &Tensor,
    real_labels: &[usize],
    syn: &Tensor,
    syn_labels: &[usize],
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
) -> Result<f64> {
    let obj = objective(params, real, real_labels, syn, syn_labels, mask, rng)?;
    crate::autodiff::meta_value(&obj, syn)
}

fn objective(
    params: &Params,
    real: &Tensor,
    real_labels: &[usize],
    syn: &Tensor,
    syn_labels: &[usize],
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
) -> Result<DcObjective> {
    if real_labels.is_empty() || syn_labels.is_empty() {
        return Err(Error::usage("gradient matching needs nonempty batches"));
    }
    let syn_mask = match mask {
        Some(m) if !m.is_identity() => Some(mask::make_masks(syn.rows(), syn.row_len(), m, rng)?),
        Some(m) => {
            m.validate()?;
            None
        }
        None => None,
    };
    Ok(DcObjective {
        spec: params.spec.clone(),
        theta: params.values(),
        real: real.clone(),
        real_labels: real_labels.to_vec(),
        syn_labels: syn_labels.to_vec(),
        syn_mask,
    })
}

/// `∂ dc_loss / ∂ syn` with the same mask draw as [`dc_loss`].
#[allow(clippy::too_many_arguments)]
pub fn dc_meta_grad(
    params: &Params,
    real: &Tensor,
    real_labels: &[usize],
    syn: &Tensor,
    syn_labels: &[usize],
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
    route: MetaRoute,
) -> Result<crate::autodiff::MetaGradient> {
    let obj = objective(params, real, real_labels, syn, syn_labels, mask, rng)?;
    meta_grad(&obj, syn, route)
}

fn validate(cfg: &DcConfig) -> Result<()> {
    if cfg.ipc == 0 || cfg.real_batch == 0 || cfg.reinit_every == 0 {
        return Err(Error::usage("ipc, real batch and reinit period must be positive"));
    }
    if !(cfg.synthetic_lr.is_finite() && cfg.synthetic_lr >= 0.0 && cfg.net_lr.is_finite() && cfg.net_lr >= 0.0) {
        return Err(Error::usage("learning rates must be finite and >= 0"));
    }
    if let Some(m) = &cfg.mask {
        m.validate()?;
    }
    Ok(())
}

fn sample_class(ds: &LabeledDataset, c: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    let idx = ds.indices_of(c);
    index::sample(rng, idx.len(), n.min(idx.len()))
        .into_iter()
        .map(|i| idx[i])
        .collect()
}

/// One plain SGD step of cross-entropy on `(x, labels)`.
fn net_step(params: &Params, x: &Tensor, labels: &[usize], lr: f64) -> Result<Params> {
    let tape = Tape::new();
    let theta: Vec<Var<'_>> = params.tensors.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let z = forward(&params.spec, &theta, tape.constant(x.clone()))?;
    let g = tape.grad(cross_entropy_var(z, labels)?, &theta)?;
    let values = params
        .tensors
        .iter()
        .zip(&g)
        .map(|((_, p), g)| p.zip_map(&g.value(), |a, b| a - lr * b))
        .collect::<Result<Vec<_>>>()?;
    let mut out = params.with_values(values)?;
    out.steps += 1;
    Ok(out)
}

/// Gradient-matching distillation. Synthetic rows start from real examples;
/// each outer step updates every class block by its meta-gradient, then
/// trains the matching network on real data.
pub fn distill_dc(ds: &LabeledDataset, net: &NetSpec, cfg: &DcConfig, seed: u64) -> Result<SyntheticSet> {
    validate(cfg)?;
    net.validate()?;
    if net.num_classes() != ds.num_classes() || net.input_dim() != ds.dim() {
        return Err(Error::dim("distill_dc", "network does not fit the dataset"));
    }
    let mut rng = seeds::rng(seed, stream::DISTILL);
    let mut mask_rng = seeds::rng(seed, stream::MASK);
    let mut syn = SyntheticSet::from_real(ds, cfg.ipc, "dc", seed, &mut rng)?;
    syn.mask = cfg.mask;
    let mask = cfg.mask.filter(|m| !m.is_identity());
    let mut params: Option<Params> = None;
    for t in 0..cfg.steps {
        let diverged = |e: Error| match e {
            Error::Numeric { .. } | Error::NonFinite(_) => Error::DistillDiverged { step: t },
            e => e,
        };
        if t % cfg.reinit_every == 0 {
            params = Some(init_params(net, seeds::derive(seed, (t / cfg.reinit_every) as u64))?);
        }
        let p = params.as_ref().expect("initialized at t = 0");
        for c in 0..ds.num_classes() {
            let rows = sample_class(ds, c, cfg.real_batch, &mut rng);
            let mut real = ds.features().select_rows(&rows);
            let block = syn.class_block(c);
            let syn_mask = match (&mask, cfg.mask_target) {
                (Some(m), MaskTarget::Synthetic) => {
                    Some(mask::make_masks(block.rows(), block.row_len(), m, &mut mask_rng)?)
                }
                (Some(m), MaskTarget::Real) => {
                    real = mask::mask_batch(&real, Some(m), &mut mask_rng)?;
                    None
                }
                (None, _) => None,
            };
            let labels_c = vec![c; rows.len()];
            let obj = DcObjective {
                spec: net.clone(),
                theta: p.values(),
                real,
                real_labels: labels_c,
                syn_labels: vec![c; cfg.ipc],
                syn_mask,
            };
            let g = meta_grad(&obj, &block, MetaRoute::Exact).map_err(diverged)?;
            let updated = block.zip_map(&g.grad, |a, b| a - cfg.synthetic_lr * b)?;
            if !updated.is_finite() {
                return Err(Error::DistillDiverged { step: t });
            }
            syn.set_class_block(c, &updated);
        }
        let mut p = params.take().expect("initialized");
        for _ in 0..cfg.net_steps {
            let rows: Vec<usize> = (0..ds.num_classes())
                .flat_map(|c| sample_class(ds, c, cfg.real_batch, &mut rng))
                .collect();
            let labels: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
            p = net_step(&p, &ds.features().select_rows(&rows), &labels, cfg.net_lr).map_err(diverged)?;
        }
        params = Some(p);
        syn.steps += 1;
    }
    Ok(syn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobSpec};
    use crate::tensor::relative_error;

    fn setup() -> (LabeledDataset, NetSpec) {
        let spec = BlobSpec {
            classes: 3,
            dims: 6,
            spread: 0.5,
            center_scale: 1.5,
        };
        let ds = gen_blobs(&spec, 20, 1).unwrap();
        let net = NetSpec::Mlp {
            input_dim: 6,
            hidden: vec![8],
            num_classes: 3,
        };
        (ds, net)
    }

    #[test]
    fn identical_batches_have_zero_loss() {
        let (ds, net) = setup();
        let p = init_params(&net, 0).unwrap();
        let x = ds.features().select_rows(&[0, 1, 2]);
        let y = &ds.labels()[..3];
        let mut rng = seeds::rng(0, 6);
        assert_eq!(dc_loss(&p, &x, y, &x, y, None, &mut rng).unwrap(), 0.0);
        let r0 = dc_loss(&p, &x, y, &x.map(|v| v + 0.1), y, Some(&MaskSpec::fixed(0.0)), &mut rng).unwrap();
        let plain = dc_loss(&p, &x, y, &x.map(|v| v + 0.1), y, None, &mut rng).unwrap();
        assert_eq!(r0, plain);
        assert!(dc_loss(&p, &x, y, &x, &[], None, &mut rng).is_err());
    }

    #[test]
    fn meta_gradient_matches_differences() {
        let (ds, net) = setup();
        let p = init_params(&net, 2).unwrap();
        let real = ds.features().select_rows(&[0, 1, 2, 3]);
        let syn = ds.features().select_rows(&[5, 6]).map(|v| v * 0.9 + 0.05);
        let labels = vec![0, 0, 0, 0];
        for mask in [None, Some(MaskSpec::fixed(0.3))] {
            let exact = dc_meta_grad(&p, &real, &labels, &syn, &[0, 0], mask.as_ref(), &mut seeds::rng(1, 6), MetaRoute::Exact).unwrap();
            let fd = dc_meta_grad(
                &p,
                &real,
                &labels,
                &syn,
                &[0, 0],
                mask.as_ref(),
                &mut seeds::rng(1, 6),
                MetaRoute::FiniteDifference { h: 1e-5 },
            )
            .unwrap();
            assert!(relative_error(exact.grad.data(), fd.grad.data(), 1e-8) < 1e-3);
        }
    }

    #[test]
    fn zero_steps_returns_initialization_and_r0_matches_unmasked() {
        let (ds, net) = setup();
        let cfg = DcConfig {
            ipc: 2,
            steps: 0,
            ..DcConfig::default()
        };
        let a = distill_dc(&ds, &net, &cfg, 3).unwrap();
        let init = SyntheticSet::from_real(&ds, 2, "dc", 3, &mut seeds::rng(3, stream::DISTILL)).unwrap();
        assert_eq!(a.images, init.images);

        let cfg = DcConfig {
            ipc: 2,
            steps: 3,
            real_batch: 5,
            ..DcConfig::default()
        };
        let plain = distill_dc(&ds, &net, &cfg, 4).unwrap();
        let masked = distill_dc(
            &ds,
            &net,
            &DcConfig {
                mask: Some(MaskSpec::fixed(0.0)),
                ..cfg.clone()
            },
            4,
        )
        .unwrap();
        assert_eq!(plain.images, masked.images);
        assert_ne!(plain.images, init.images);
        assert_eq!(plain.labels, vec![0, 0, 1, 1, 2, 2]);
    }
}
