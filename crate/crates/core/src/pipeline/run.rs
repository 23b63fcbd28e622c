//! Per-seed execution: data → distill → train → calibrate → analyze.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{Backbone, DatasetConfig, ExperimentConfig, MethodConfig};
use super::record::{RunRecord, SeedRecord, SeedStatus, SweepPoint, Timing};
use crate::analysis::{explained_ratio, max_logit_stats, ood_confidence_compare, svd_accuracy_sweep};
use crate::calib::{calibration_report, fit_temperature, CalibrationReport, FitMode, FitSpec};
use crate::data::{
    apply_normalization, gen_uniform_noise, load_cifar10_bin, load_idx, normalize_dataset, split_per_class, BlobSpec,
    Blobs, LabeledDataset, SplitSpec,
};
use crate::distill::{distill_dc, distill_mtt, record_trajectory, MaskSpec, SyntheticSet};
use crate::error::{Error, Result};
use crate::nets::{evaluate, init_params, sgd_train, NetSpec, Params, TrainConfig, TrainLoss};
use crate::seeds::{self, stream};
use crate::tensor::Tensor;

/// Environment variable naming the output root.
pub const OUTPUT_ENV: &str = "MDCAL_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Distill,
    Train,
    Calibrate,
    Analyze,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Last stage to execute.
    pub until: Stage,
    /// Run directory for the record and per-seed tensors; `None` keeps
    /// everything in memory.
    pub output: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            until: Stage::Analyze,
            output: None,
        }
    }
}

/// `$MDCAL_OUT`, else the config's `output_dir`, else `./runs`.
pub fn output_root(config: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<output root>/<name>-<hash prefix>`.
pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    run_dir_under(&output_root(config), config)
}

pub fn run_dir_under(root: &Path, config: &ExperimentConfig) -> PathBuf {
    let name = if config.name.is_empty() { "run" } else { config.name.as_str() };
    root.join(format!("{name}-{}", &config.hash()[..12]))
}

/// Runs every seed, recording failures per seed, and writes the record
/// when an output directory is given.
pub fn run_pipeline(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let mut seeds = Vec::with_capacity(config.seeds.len());
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let t = Instant::now();
        let artifacts = opts.output.as_ref().map(|d| d.join(format!("seed-{seed}")));
        seeds.push(run_seed(config, seed, opts.until, artifacts.as_deref()));
        per_seed.push((seed, t.elapsed().as_secs_f64()));
    }
    let timing = Timing {
        total_secs: start.elapsed().as_secs_f64(),
        per_seed_secs: per_seed,
    };
    let record = RunRecord::assemble(config.clone(), seeds, timing);
    if let Some(dir) = &opts.output {
        record.save(dir)?;
    }
    Ok(record)
}

type StageResult<T> = std::result::Result<T, (String, Error)>;

fn at<T>(stage: &str, r: Result<T>) -> StageResult<T> {
    r.map_err(|e| (stage.to_string(), e))
}

pub fn run_seed(config: &ExperimentConfig, seed: u64, until: Stage, artifacts: Option<&Path>) -> SeedRecord {
    let mut rec = SeedRecord::new(seed);
    if let Err((stage, e)) = leg(config, seed, until, artifacts, &mut rec) {
        rec.status = SeedStatus::Failed {
            stage,
            error: e.to_string(),
        };
    }
    rec
}

fn leg(cfg: &ExperimentConfig, seed: u64, until: Stage, out: Option<&Path>, rec: &mut SeedRecord) -> StageResult<()> {
    let (train, test) = at("data", load_data(&cfg.dataset, seed))?;
    rec.stages.push("data".into());

    let syn = at("distill", distill(cfg, &train, cfg.distill.ipc, seed))?;
    if let Some(dir) = out {
        at("distill", save_in(dir, "synthetic.ntf", syn.to_named()))?;
    }
    rec.stages.push("distill".into());
    if until == Stage::Distill {
        return Ok(());
    }

    let syn_ds = at("train", syn.to_dataset())?;
    let ddnn = at("train", train_net(&cfg.net, &syn_ds, &cfg.train.ddnn, seed))?;
    if let Some(dir) = out {
        at("train", save_in(dir, "ddnn.ntf", ddnn.to_named()))?;
    }
    let eval = at("train", evaluate(&ddnn, &test))?;
    rec.ddnn_accuracy = Some(eval.accuracy);
    rec.stages.push("train".into());
    if until == Stage::Train {
        return Ok(());
    }

    let bins = cfg.calibration.bins;
    let mut raw = at("calibrate", calibration_report(&eval.logits, test.labels(), 1.0, bins, "raw"))?;
    raw.seed = Some(seed);
    rec.reports.push(raw);
    let val = at("calibrate", validation_split(&syn_ds, cfg.calibration.validation_fraction, seed))?;
    for m in &cfg.calibration.methods {
        let r = at(
            "calibrate",
            apply_method(cfg, m, &ddnn, &eval.logits, &syn_ds, &val, &test, seed),
        )?;
        rec.reports.push(r);
    }
    rec.stages.push("calibrate".into());
    if until == Stage::Calibrate {
        return Ok(());
    }

    at("analyze", analyze(cfg, seed, &train, &test, &syn_ds, &ddnn, &eval.logits, &val, rec))?;
    rec.stages.push("analyze".into());
    Ok(())
}

fn save_in(dir: &Path, file: &str, named: Result<crate::store::NamedTensors>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    named?.save(dir.join(file))
}

/// Normalized `(train, test)` for one seed; statistics come from train.
pub fn load_data(ds: &DatasetConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = match ds {
        DatasetConfig::Blobs { classes, dims, spread, center_scale, train_per_class, test_per_class } => {
            let blobs = Blobs::new(
                BlobSpec {
                    classes: *classes,
                    dims: *dims,
                    spread: *spread,
                    center_scale: *center_scale,
                },
                seed,
            )?;
            let train = blobs.sample(*train_per_class, &mut seeds::rng(seed, stream::DATA))?;
            let test = blobs.sample(*test_per_class, &mut seeds::rng(seed, stream::TEST_DATA))?;
            (train, test)
        }
        DatasetConfig::Idx { images, labels, test_fraction, train_per_class } => {
            let all = load_idx(images, labels)?;
            let (test, train) = split_per_class(&all, &SplitSpec::per_class(*test_fraction, seed))?;
            (cap_per_class(train, *train_per_class), test)
        }
        DatasetConfig::Cifar { train, test, train_per_class } => {
            let parts = train.iter().map(load_cifar10_bin).collect::<Result<Vec<_>>>()?;
            (cap_per_class(concat(parts)?, *train_per_class), load_cifar10_bin(test)?)
        }
    };
    let train = normalize_dataset(&train)?;
    let norm = train.normalization.clone().expect("normalize_dataset records statistics");
    let test = apply_normalization(&test, &norm)?;
    Ok((train, test))
}

fn cap_per_class(ds: LabeledDataset, cap: Option<usize>) -> LabeledDataset {
    let Some(cap) = cap else { return ds };
    let mut keep: Vec<usize> = (0..ds.num_classes())
        .flat_map(|c| ds.indices_of(c).into_iter().take(cap))
        .collect();
    keep.sort_unstable();
    ds.subset(&keep)
}

fn concat(parts: Vec<LabeledDataset>) -> Result<LabeledDataset> {
    let first = parts.first().ok_or_else(|| Error::Config("no training batches".into()))?;
    let (dim, shape, k) = (first.dim(), first.image_shape, first.num_classes());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut classes = k;
    for p in &parts {
        if p.dim() != dim {
            return Err(Error::Config("training batches differ in image size".into()));
        }
        data.extend_from_slice(p.features().data());
        labels.extend_from_slice(p.labels());
        classes = classes.max(p.num_classes());
    }
    let n = labels.len();
    let ds = LabeledDataset::new("cifar10", Tensor::new(vec![n, dim], data)?, labels, classes)?;
    match shape {
        Some(s) => ds.with_image_shape(s),
        None => Ok(ds),
    }
}

/// Distills `ipc` rows per class with the configured backbone.
pub fn distill(cfg: &ExperimentConfig, train: &LabeledDataset, ipc: usize, seed: u64) -> Result<SyntheticSet> {
    let d = &cfg.distill;
    match d.backbone {
        Backbone::None => {
            let mut rng = seeds::rng(seed, stream::DISTILL);
            SyntheticSet::from_real(train, ipc, Backbone::None.tag(), seed, &mut rng)
        }
        Backbone::Dc => distill_dc(train, &cfg.net, &crate::distill::DcConfig { ipc, ..d.dc_config() }, seed),
        Backbone::Mtt => {
            let e = &d.experts;
            let expert_train = TrainConfig {
                epochs: e.epochs,
                lr: e.lr,
                batch_size: e.batch_size,
                loss: TrainLoss::CrossEntropy,
            };
            let base = seeds::derive(seed, stream::EXPERT);
            let experts = (0..e.count as u64)
                .map(|i| record_trajectory(&cfg.net, train, &expert_train, e.interval, seeds::derive(base, i)))
                .collect::<Result<Vec<_>>>()?;
            distill_mtt(train, &experts, &crate::distill::MttConfig { ipc, ..d.mtt_config() }, seed)
        }
    }
}

pub fn train_net(net: &NetSpec, ds: &LabeledDataset, tc: &TrainConfig, seed: u64) -> Result<Params> {
    Ok(sgd_train(&init_params(net, seed)?, ds, tc, seed)?.params)
}

/// The per-class validation sample of the distilled set.
pub fn validation_split(syn: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    Ok(split_per_class(syn, &SplitSpec::per_class(fraction, seed))?.0)
}

#[allow(clippy::too_many_arguments)]
fn apply_method(
    cfg: &ExperimentConfig,
    method: &MethodConfig,
    ddnn: &Params,
    logits: &Tensor,
    syn: &LabeledDataset,
    val: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
) -> Result<CalibrationReport> {
    let bins = cfg.calibration.bins;
    let label = method.label();
    let retrain = |loss: TrainLoss| -> Result<CalibrationReport> {
        let p = train_net(&cfg.net, syn, &TrainConfig { loss, ..cfg.train.ddnn }, seed)?;
        let e = evaluate(&p, test)?;
        calibration_report(&e.logits, test.labels(), 1.0, bins, &label)
    };
    let mut report = match *method {
        MethodConfig::Ts { mode } => {
            let spec = FitSpec { mode, ..FitSpec::default() };
            let t = fit_temperature(ddnn, val, &spec, seed)?;
            calibration_report(logits, test.labels(), t.temperature, bins, &label)?
        }
        MethodConfig::Mts { ratio, mode, fit_mode, domain, repeats } => {
            let spec = FitSpec {
                mode: fit_mode,
                mask: Some(MaskSpec { ratio, mode }),
                domain,
                repeats,
                ..FitSpec::default()
            };
            let t = fit_temperature(ddnn, val, &spec, seed)?;
            calibration_report(logits, test.labels(), t.temperature, bins, &label)?
        }
        MethodConfig::LabelSmoothing { epsilon } => retrain(TrainLoss::LabelSmoothing { epsilon })?,
        MethodConfig::Focal { gamma } => retrain(TrainLoss::Focal { gamma })?,
        MethodConfig::Mixup { alpha } => retrain(TrainLoss::Mixup { alpha })?,
    };
    report.mask_ratio = method.mask_ratio();
    report.seed = Some(seed);
    Ok(report)
}

/// Fits MTS at ratio `r` on `val` and scores it on the test logits.
#[allow(clippy::too_many_arguments)]
fn mts_point(
    ddnn: &Params,
    val: &LabeledDataset,
    logits: &Tensor,
    test: &LabeledDataset,
    r: f64,
    bins: usize,
    seed: u64,
    x: f64,
) -> Result<SweepPoint> {
    let spec = FitSpec {
        mask: Some(MaskSpec::fixed(r)),
        mode: FitMode::Converge,
        ..FitSpec::default()
    };
    let t = fit_temperature(ddnn, val, &spec, seed)?;
    let rep = calibration_report(logits, test.labels(), t.temperature, bins, "mts")?;
    Ok(SweepPoint {
        x,
        temperature: t.temperature,
        ece: rep.ece,
        signed_gap: rep.signed_gap,
        accuracy: rep.accuracy,
        raw_ece: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &LabeledDataset,
    test: &LabeledDataset,
    syn: &LabeledDataset,
    ddnn: &Params,
    logits: &Tensor,
    val: &LabeledDataset,
    rec: &mut SeedRecord,
) -> Result<()> {
    let a = &cfg.analysis;
    let bins = cfg.calibration.bins;
    let an = &mut rec.analysis;
    if let Some(hb) = a.max_logit_bins {
        an.max_logit_ddnn = Some(max_logit_stats(logits, hb)?);
    }
    if a.fdnn {
        let fdnn = train_net(&cfg.net, train, &cfg.train.fdnn, seed)?;
        let fe = evaluate(&fdnn, test)?;
        rec.fdnn_accuracy = Some(fe.accuracy);
        let mut r = calibration_report(&fe.logits, test.labels(), 1.0, bins, "fdnn")?;
        r.seed = Some(seed);
        rec.fdnn_report = Some(r);
        if let Some(hb) = a.max_logit_bins {
            an.max_logit_fdnn = Some(max_logit_stats(&fe.logits, hb)?);
        }
    }
    if a.explained_ratio {
        an.explained_full = Some(explained_ratio(train.features())?);
        an.explained_distilled = Some(explained_ratio(syn.features())?);
    }
    if let Some(s) = &a.svd_sweep {
        an.svd_full = Some(svd_accuracy_sweep(
            "full",
            train,
            test,
            &s.fractions,
            s.layout,
            &cfg.net,
            &cfg.train.fdnn,
            &[seed],
        )?);
        an.svd_distilled = Some(svd_accuracy_sweep(
            "distilled",
            syn,
            test,
            &s.fractions,
            s.layout,
            &cfg.net,
            &cfg.train.ddnn,
            &[seed],
        )?);
    }
    if let Some(n) = a.ood_examples {
        let (lo, hi) = value_range(train.features());
        let noise = gen_uniform_noise(n, train.dim(), lo, hi, train.num_classes(), seed)?;
        an.ood = Some(ood_confidence_compare(ddnn, test, &noise, None, bins)?);
    }
    if let Some(rs) = &a.r_sweep {
        an.r_sweep = rs
            .iter()
            .map(|&r| mts_point(ddnn, val, logits, test, r, bins, seed, r))
            .collect::<Result<_>>()?;
    }
    if let Some(ns) = &a.n_sweep {
        an.n_sweep = ns
            .iter()
            .map(|&f| {
                let v = validation_split(syn, f, seed)?;
                mts_point(ddnn, &v, logits, test, a.sweep_ratio, bins, seed, f)
            })
            .collect::<Result<_>>()?;
    }
    if let Some(ks) = &a.ipc_sweep {
        let mut pts = Vec::with_capacity(ks.len());
        for &k in ks {
            let s = distill(cfg, train, k, seed)?.to_dataset()?;
            let p = train_net(&cfg.net, &s, &cfg.train.ddnn, seed)?;
            let e = evaluate(&p, test)?;
            let raw = calibration_report(&e.logits, test.labels(), 1.0, bins, "raw")?;
            let v = validation_split(&s, cfg.calibration.validation_fraction, seed)?;
            let mut pt = mts_point(&p, &v, &e.logits, test, a.sweep_ratio, bins, seed, k as f64)?;
            pt.raw_ece = Some(raw.ece);
            pts.push(pt);
        }
        rec.analysis.ipc_sweep = pts;
    }
    Ok(())
}

fn value_range(x: &Tensor) -> (f64, f64) {
    x.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}
