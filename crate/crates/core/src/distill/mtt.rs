//! Trajectory matching: a student trained for a few steps on the synthetic
//! set should land where an expert trained on real data landed.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mask::{self, MaskSpec};
use super::synthetic::SyntheticSet;
use crate::autodiff::{meta_grad, MetaGradient, MetaObjective, MetaRoute, Tape, Var};
use crate::calib::losses::cross_entropy_var;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nets::{forward, init_params, sgd_train_observed, NetSpec, TrainConfig};
use crate::seeds::{self, stream, Rng};
use crate::store::NamedTensors;
use crate::tensor::Tensor;

/// Parameter snapshots `θ*_0, θ*_M, θ*_2M, …` of full-data training.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    pub spec: NetSpec,
    pub names: Vec<String>,
    pub snapshots: Vec<Vec<Tensor>>,
    /// SGD steps between snapshots.
    pub interval: usize,
    pub seed: u64,
    pub lr: f64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryMeta {
    kind: String,
    spec: NetSpec,
    names: Vec<String>,
    count: usize,
    interval: usize,
    seed: u64,
    lr: f64,
}

/// Trains from `init_params(spec, seed)` and keeps every `interval`-th
/// parameter vector, starting with the initialization.
pub fn record_trajectory(
    spec: &NetSpec,
    ds: &LabeledDataset,
    train: &TrainConfig,
    interval: usize,
    seed: u64,
) -> Result<ExpertTrajectory> {
    if interval == 0 {
        return Err(Error::usage("snapshot interval must be positive"));
    }
    let per_epoch = ds.len().div_ceil(train.batch_size.max(1));
    if train.epochs * per_epoch < interval {
        return Err(Error::usage(format!(
            "{} training steps cannot fill a snapshot interval of {interval}",
            train.epochs * per_epoch
        )));
    }
    let init = init_params(spec, seed)?;
    let mut snapshots = vec![init.values()];
    sgd_train_observed(&init, ds, train, seeds::derive(seed, stream::EXPERT), |step, theta| {
        if step % interval == 0 {
            snapshots.push(theta.to_vec());
        }
    })?;
    Ok(ExpertTrajectory {
        spec: spec.clone(),
        names: init.tensors.iter().map(|(n, _)| n.clone()).collect(),
        snapshots,
        interval,
        seed,
        lr: train.lr,
    })
}

impl ExpertTrajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn to_named(&self) -> Result<NamedTensors> {
        let tensors = self
            .snapshots
            .iter()
            .enumerate()
            .flat_map(|(k, snap)| {
                self.names
                    .iter()
                    .zip(snap)
                    .map(move |(n, t)| (format!("s{k}/{n}"), t.clone()))
            })
            .collect();
        NamedTensors::new(
            &TrajectoryMeta {
                kind: "trajectory".into(),
                spec: self.spec.clone(),
                names: self.names.clone(),
                count: self.snapshots.len(),
                interval: self.interval,
                seed: self.seed,
                lr: self.lr,
            },
            tensors,
        )
    }

    pub fn from_named(file: &NamedTensors) -> Result<Self> {
        let meta: TrajectoryMeta = file.metadata_as()?;
        let missing = |name: &str| Error::Format {
            offset: 0,
            detail: format!("trajectory file lacks tensor `{name}`"),
        };
        let snapshots = (0..meta.count)
            .map(|k| {
                meta.names
                    .iter()
                    .map(|n| {
                        let key = format!("s{k}/{n}");
                        file.get(&key).cloned().ok_or_else(|| missing(&key))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if snapshots.len() < 2 {
            return Err(Error::Format {
                offset: 0,
                detail: "a trajectory needs at least two snapshots".into(),
            });
        }
        Ok(ExpertTrajectory {
            spec: meta.spec,
            names: meta.names,
            snapshots,
            interval: meta.interval,
            seed: meta.seed,
            lr: meta.lr,
        })
    }
}

/// `Σ_p ‖a_p − b_p‖²`, accumulated in parameter order.
fn sq_distance<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for (x, y) in a.iter().zip(b) {
        let d = x.sub(*y)?.sq_norm()?;
        total = Some(match total {
            Some(t) => t.add(d)?,
            None => d,
        });
    }
    total.ok_or_else(|| Error::usage("empty parameter list"))
}

/// `‖θ̂_N − θ*_target‖² / ‖θ*_start − θ*_target‖²` as a function of the
/// synthetic rows, with `θ̂` started at `θ*_start`.
pub struct MttObjective {
    pub spec: NetSpec,
    pub start: Vec<Tensor>,
    pub target: Vec<Tensor>,
    pub student_lr: f64,
    pub syn_labels: Vec<usize>,
    /// One entry per student step; `None` leaves that step unmasked.
    pub masks: Vec<Option<Tensor>>,
}

impl MttObjective {
    fn denominator(&self) -> Result<f64> {
        let tape = Tape::new();
        let a: Vec<_> = self.start.iter().map(|t| tape.constant(t.clone())).collect();
        let b: Vec<_> = self.target.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(sq_distance(&a, &b)?.item())
    }
}

impl MetaObjective for MttObjective {
    fn build<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Var<'t>> {
        if self.masks.is_empty() {
            return Err(Error::usage("trajectory matching needs at least one student step"));
        }
        let denom = self.denominator()?;
        if denom == 0.0 {
            return Err(Error::DegenerateTrajectory);
        }
        let mut theta: Vec<Var<'t>> = self.start.iter().map(|t| tape.leaf(t.clone())).collect();
        for m in &self.masks {
            let x = match m {
                Some(m) => s.mul(tape.constant(m.clone()))?,
                None => s,
            };
            let l = cross_entropy_var(forward(&self.spec, &theta, x)?, &self.syn_labels)?;
            let g = tape.grad(l, &theta)?;
            theta = theta
                .iter()
                .zip(&g)
                .map(|(&p, &gi)| p.sub(gi.scale(self.student_lr)?))
                .collect::<Result<_>>()?;
        }
        let target: Vec<_> = self.target.iter().map(|t| tape.constant(t.clone())).collect();
        sq_distance(&theta, &target)?.div_scalar(denom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MttConfig {
    pub ipc: usize,
    pub steps: usize,
    /// Student SGD steps `N` per matching window.
    pub student_steps: usize,
    /// Snapshots between the window's start and target.
    pub expert_span: usize,
    pub student_lr: f64,
    pub synthetic_lr: f64,
    /// Latest allowed start snapshot; `None` allows any.
    pub max_start: Option<usize>,
    pub mask: Option<MaskSpec>,
}

impl Default for MttConfig {
    fn default() -> Self {
        MttConfig {
            ipc: 10,
            steps: 200,
            student_steps: 3,
            expert_span: 1,
            student_lr: 0.05,
            synthetic_lr: 0.1,
            max_start: None,
            mask: None,
        }
    }
}

fn step_masks(rows: usize, d: usize, n: usize, mask: Option<&MaskSpec>, rng: &mut Rng) -> Result<Vec<Option<Tensor>>> {
    (0..n)
        .map(|_| match mask {
            Some(m) if !m.is_identity() => mask::make_masks(rows, d, m, rng).map(Some),
            Some(m) => m.validate().map(|_| None),
            None => Ok(None),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn objective(
    syn: &Tensor,
    syn_labels: &[usize],
    traj: &ExpertTrajectory,
    start: usize,
    span: usize,
    student_steps: usize,
    student_lr: f64,
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
) -> Result<MttObjective> {
    if student_steps == 0 {
        return Err(Error::usage("trajectory matching needs at least one student step"));
    }
    if span == 0 || start + span >= traj.len() {
        return Err(Error::usage(format!(
            "window {start}..{} does not fit a trajectory of {} snapshots",
            start + span,
            traj.len()
        )));
    }
    Ok(MttObjective {
        spec: traj.spec.clone(),
        start: traj.snapshots[start].clone(),
        target: traj.snapshots[start + span].clone(),
        student_lr,
        syn_labels: syn_labels.to_vec(),
        masks: step_masks(syn.rows(), syn.row_len(), student_steps, mask, rng)?,
    })
}

/// Normalized distance after `student_steps` SGD steps on the (optionally
/// masked, fresh mask per step) synthetic rows.
#[allow(clippy::too_many_arguments)]
pub fn mtt_loss(
    syn: &Tensor,
    syn_labels: &[usize],
    traj: &ExpertTrajectory,
    start: usize,
    span: usize,
    student_steps: usize,
    student_lr: f64,
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
) -> Result<f64> {
    let obj = objective(syn, syn_labels, traj, start, span, student_steps, student_lr, mask, rng)?;
    crate::autodiff::meta_value(&obj, syn)
}

#[allow(clippy::too_many_arguments)]
pub fn mtt_meta_grad(
    syn: &Tensor,
    syn_labels: &[usize],
    traj: &ExpertTrajectory,
    start: usize,
    span: usize,
    student_steps: usize,
    student_lr: f64,
    mask: Option<&MaskSpec>,
    rng: &mut Rng,
    route: MetaRoute,
) -> Result<MetaGradient> {
    let obj = objective(syn, syn_labels, traj, start, span, student_steps, student_lr, mask, rng)?;
    meta_grad(&obj, syn, route)
}

/// Trajectory-matching distillation over a set of expert trajectories.
pub fn distill_mtt(
    ds: &LabeledDataset,
    trajectories: &[ExpertTrajectory],
    cfg: &MttConfig,
    seed: u64,
) -> Result<SyntheticSet> {
    if trajectories.is_empty() {
        return Err(Error::usage("trajectory matching needs at least one expert trajectory"));
    }
    if cfg.student_steps == 0 || cfg.expert_span == 0 {
        return Err(Error::usage("student steps and expert span must be positive"));
    }
    if !(cfg.synthetic_lr.is_finite() && cfg.synthetic_lr >= 0.0 && cfg.student_lr.is_finite()) {
        return Err(Error::usage("learning rates must be finite"));
    }
    if let Some(m) = &cfg.mask {
        m.validate()?;
    }
    for t in trajectories {
        if t.len() <= cfg.expert_span {
            return Err(Error::usage(format!(
                "trajectory with {} snapshots is too short for span {}",
                t.len(),
                cfg.expert_span
            )));
        }
        if t.spec.input_dim() != ds.dim() || t.spec.num_classes() != ds.num_classes() {
            return Err(Error::dim("distill_mtt", "expert network does not fit the dataset"));
        }
    }
    let mut rng = seeds::rng(seed, stream::DISTILL);
    let mut mask_rng = seeds::rng(seed, stream::MASK);
    let mut syn = SyntheticSet::from_real(ds, cfg.ipc, "mtt", seed, &mut rng)?;
    syn.mask = cfg.mask;
    let labels = syn.labels.clone();
    for step in 0..cfg.steps {
        let traj = &trajectories[rng.gen_range(0..trajectories.len())];
        let mut last = traj.len() - 1 - cfg.expert_span;
        if let Some(m) = cfg.max_start {
            last = last.min(m);
        }
        let start = rng.gen_range(0..=last);
        let g = mtt_meta_grad(
            &syn.images,
            &labels,
            traj,
            start,
            cfg.expert_span,
            cfg.student_steps,
            cfg.student_lr,
            cfg.mask.as_ref(),
            &mut mask_rng,
            MetaRoute::Exact,
        )
        .map_err(|e| match e {
            Error::Numeric { .. } | Error::NonFinite(_) => Error::DistillDiverged { step },
            e => e,
        })?;
        let updated = syn.images.zip_map(&g.grad, |a, b| a - cfg.synthetic_lr * b)?;
        if !updated.is_finite() {
            return Err(Error::DistillDiverged { step });
        }
        syn.images = updated;
        syn.steps += 1;
    }
    Ok(syn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobSpec};
    use crate::nets::TrainLoss;
    use crate::tensor::relative_error;

    fn setup() -> (LabeledDataset, NetSpec) {
        let spec = BlobSpec {
            classes: 3,
            dims: 5,
            spread: 0.5,
            center_scale: 1.5,
        };
        let ds = gen_blobs(&spec, 16, 2).unwrap();
        let net = NetSpec::Mlp {
            input_dim: 5,
            hidden: vec![6],
            num_classes: 3,
        };
        (ds, net)
    }

    fn train(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr,
            batch_size: 12,
            loss: TrainLoss::CrossEntropy,
        }
    }

    #[test]
    fn trajectory_shape() {
        let (ds, net) = setup();
        // 48 examples / 12 = 4 steps per epoch
        let t = record_trajectory(&net, &ds, &train(2, 0.1), 8, 0).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.snapshots[0], init_params(&net, 0).unwrap().values());
        assert_ne!(t.snapshots[0], t.snapshots[1]);
        let frozen = record_trajectory(&net, &ds, &train(2, 0.0), 4, 0).unwrap();
        assert_eq!(frozen.snapshots[0], frozen.snapshots[1]);
        assert!(record_trajectory(&net, &ds, &train(1, 0.1), 8, 0).is_err());
        let back = ExpertTrajectory::from_named(&NamedTensors::decode(&t.to_named().unwrap().encode()).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn loss_identities() {
        let (ds, net) = setup();
        let traj = record_trajectory(&net, &ds, &train(3, 0.1), 4, 1).unwrap();
        let syn = ds.features().select_rows(&[0, 20, 40]);
        let labels = [ds.labels()[0], ds.labels()[20], ds.labels()[40]];
        let mut rng = seeds::rng(0, 6);
        assert_eq!(mtt_loss(&syn, &labels, &traj, 0, 1, 2, 0.0, None, &mut rng).unwrap(), 1.0);
        let plain = mtt_loss(&syn, &labels, &traj, 1, 1, 2, 0.05, None, &mut rng).unwrap();
        let r0 = mtt_loss(&syn, &labels, &traj, 1, 1, 2, 0.05, Some(&MaskSpec::fixed(0.0)), &mut rng).unwrap();
        assert_eq!(plain, r0);
        assert!(plain >= 0.0);

        let frozen = record_trajectory(&net, &ds, &train(2, 0.0), 4, 0).unwrap();
        assert!(matches!(
            mtt_loss(&syn, &labels, &frozen, 0, 1, 1, 0.1, None, &mut rng),
            Err(Error::DegenerateTrajectory)
        ));
    }

    #[test]
    fn meta_gradient_matches_differences() {
        let (ds, net) = setup();
        let traj = record_trajectory(&net, &ds, &train(3, 0.1), 4, 1).unwrap();
        let syn = ds.features().select_rows(&[1, 21, 41]);
        let labels = [ds.labels()[1], ds.labels()[21], ds.labels()[41]];
        for (n, mask) in [(1, None), (3, Some(MaskSpec::fixed(0.4)))] {
            let e = mtt_meta_grad(&syn, &labels, &traj, 0, 1, n, 0.1, mask.as_ref(), &mut seeds::rng(2, 6), MetaRoute::Exact).unwrap();
            let f = mtt_meta_grad(
                &syn,
                &labels,
                &traj,
                0,
                1,
                n,
                0.1,
                mask.as_ref(),
                &mut seeds::rng(2, 6),
                MetaRoute::FiniteDifference { h: 1e-5 },
            )
            .unwrap();
            assert!(relative_error(e.grad.data(), f.grad.data(), 1e-8) < 1e-3);
        }
    }

    #[test]
    fn distillation_runs_with_dynamic_mask() {
        let (ds, net) = setup();
        let traj = record_trajectory(&net, &ds, &train(3, 0.1), 4, 1).unwrap();
        let cfg = MttConfig {
            ipc: 2,
            steps: 0,
            ..MttConfig::default()
        };
        let init = distill_mtt(&ds, std::slice::from_ref(&traj), &cfg, 5).unwrap();
        let cfg = MttConfig {
            ipc: 2,
            steps: 5,
            mask: Some(MaskSpec::dynamic(0.0, 0.1)),
            ..MttConfig::default()
        };
        let out = distill_mtt(&ds, &[traj], &cfg, 5).unwrap();
        assert!(out.images.is_finite());
        assert_ne!(out.images, init.images);
        assert_eq!(out.steps, 5);
    }
}
