//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::SvdLayout;
use crate::calib::{FitMode, MaskDomain};
use crate::distill::{DcConfig, MaskMode, MaskSpec, MaskTarget, MttConfig};
use crate::error::{Error, Result};
use crate::nets::{NetSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian clusters; centers and samples are drawn per seed.
    Blobs {
        classes: usize,
        dims: usize,
        #[serde(default = "one")]
        spread: f64,
        #[serde(default = "one")]
        center_scale: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    /// An IDX image/label pair, split per class into train and test.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        /// Keep at most this many training examples per class.
        #[serde(default)]
        train_per_class: Option<usize>,
    },
    /// CIFAR-10 binary batches.
    Cifar {
        train: Vec<PathBuf>,
        test: PathBuf,
        #[serde(default)]
        train_per_class: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_test_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Random real examples, no optimization.
    None,
    #[default]
    Dc,
    Mtt,
}

impl Backbone {
    pub fn tag(self) -> &'static str {
        match self {
            Backbone::None => "random",
            Backbone::Dc => "dc",
            Backbone::Mtt => "mtt",
        }
    }
}

/// Expert trajectories for trajectory matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub count: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// SGD steps between stored snapshots.
    pub interval: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            count: 2,
            epochs: 5,
            lr: 0.05,
            batch_size: 32,
            interval: 10,
        }
    }
}

/// `ipc` and `mask` here override the ones inside `dc` and `mtt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub backbone: Backbone,
    pub ipc: usize,
    pub mask: Option<MaskSpec>,
    pub mask_target: MaskTarget,
    pub dc: DcConfig,
    pub mtt: MttConfig,
    pub experts: ExpertConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            backbone: Backbone::Dc,
            ipc: 10,
            mask: None,
            mask_target: MaskTarget::Synthetic,
            dc: DcConfig::default(),
            mtt: MttConfig::default(),
            experts: ExpertConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn dc_config(&self) -> DcConfig {
        DcConfig {
            ipc: self.ipc,
            mask: self.mask,
            mask_target: self.mask_target,
            ..self.dc.clone()
        }
    }

    pub fn mtt_config(&self) -> MttConfig {
        MttConfig {
            ipc: self.ipc,
            mask: self.mask,
            ..self.mtt.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Network trained on the distilled set.
    pub ddnn: TrainConfig,
    /// Network trained on the full training set.
    pub fdnn: TrainConfig,
}

/// One calibration method. Post-hoc methods rescale the DDNN's logits;
/// training-time methods retrain it on the distilled set with their loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Ts {
        #[serde(default)]
        mode: FitMode,
    },
    Mts {
        ratio: f64,
        #[serde(default)]
        mode: MaskMode,
        #[serde(default)]
        fit_mode: FitMode,
        #[serde(default)]
        domain: MaskDomain,
        #[serde(default = "one_usize")]
        repeats: usize,
    },
    LabelSmoothing {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Mixup {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn one_usize() -> usize {
    1
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    0.2
}

impl MethodConfig {
    pub fn mts(ratio: f64) -> Self {
        MethodConfig::Mts {
            ratio,
            mode: MaskMode::Fixed,
            fit_mode: FitMode::Converge,
            domain: MaskDomain::Inputs,
            repeats: 1,
        }
    }

    /// Row label used in reports, e.g. `mts(r=0.3)`.
    pub fn label(&self) -> String {
        match *self {
            MethodConfig::Ts { mode: FitMode::Converge } => "ts".into(),
            MethodConfig::Ts { mode: FitMode::OneStep } => "ts(one-step)".into(),
            MethodConfig::Mts { ratio, mode, .. } => match mode {
                MaskMode::Fixed => format!("mts(r={ratio})"),
                MaskMode::DynamicUniform { lo, hi } => format!("mts(r~U[{lo},{hi}])"),
            },
            MethodConfig::LabelSmoothing { epsilon } => format!("label_smoothing(eps={epsilon})"),
            MethodConfig::Focal { gamma } => format!("focal(gamma={gamma})"),
            MethodConfig::Mixup { alpha } => format!("mixup(alpha={alpha})"),
        }
    }

    pub fn mask_ratio(&self) -> Option<f64> {
        match *self {
            MethodConfig::Mts { ratio, .. } => Some(ratio),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            MethodConfig::Mts { ratio, mode, repeats, .. } => {
                MaskSpec { ratio, mode }.validate()?;
                if repeats == 0 {
                    return bad("mts repeats must be positive".into());
                }
                Ok(())
            }
            MethodConfig::LabelSmoothing { epsilon } if !(0.0..1.0).contains(&epsilon) => {
                bad(format!("label smoothing epsilon must be in [0, 1), got {epsilon}"))
            }
            MethodConfig::Focal { gamma } if !(gamma >= 0.0) => {
                bad(format!("focal gamma must be non-negative, got {gamma}"))
            }
            MethodConfig::Mixup { alpha } if !(alpha > 0.0) => {
                bad(format!("mixup alpha must be positive, got {alpha}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub bins: usize,
    /// Share of each class of the distilled set used to fit temperatures.
    pub validation_fraction: f64,
    pub methods: Vec<MethodConfig>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            bins: 15,
            validation_fraction: 0.1,
            methods: vec![MethodConfig::Ts { mode: FitMode::Converge }, MethodConfig::mts(0.3)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdSweepConfig {
    pub fractions: Vec<f64>,
    pub layout: SvdLayout,
}

impl Default for SvdSweepConfig {
    fn default() -> Self {
        SvdSweepConfig {
            fractions: vec![0.0, 0.1, 0.15, 0.2],
            layout: SvdLayout::Dataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Train a network on the full training set for comparison.
    pub fdnn: bool,
    pub svd_sweep: Option<SvdSweepConfig>,
    pub explained_ratio: bool,
    /// Histogram bins for max-logit statistics; `None` skips them.
    pub max_logit_bins: Option<usize>,
    /// Uniform-noise OOD comparison, with this many noise examples.
    pub ood_examples: Option<usize>,
    /// Mask ratios for the MTS ratio sweep.
    pub r_sweep: Option<Vec<f64>>,
    /// Validation fractions for the MTS validation-size sweep.
    pub n_sweep: Option<Vec<f64>>,
    /// Mask ratio used by the validation-size and IPC sweeps.
    pub sweep_ratio: f64,
    /// Distilled-set sizes for the IPC sweep.
    pub ipc_sweep: Option<Vec<usize>>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fdnn: false,
            svd_sweep: None,
            explained_ratio: false,
            max_logit_bins: None,
            ood_examples: None,
            r_sweep: None,
            n_sweep: None,
            sweep_ratio: 0.3,
            ipc_sweep: None,
        }
    }
}

/// The ratio grid 0.1, 0.2, …, 0.9.
pub fn default_r_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// The validation-fraction grid 0.1, 0.2, …, 0.5.
pub fn default_n_grid() -> Vec<f64> {
    (1..=5).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetConfig,
    pub net: NetSpec,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub seeds: Vec<u64>,
    /// Where runs are written; `MDCAL_OUT` overrides it. Not hashed.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML file and resolves relative dataset paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = p.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.exists() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetConfig::Cifar { train, test, .. } => {
                train.iter_mut().for_each(fix);
                fix(test);
            }
            DatasetConfig::Blobs { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("the seed list is empty".into()));
        }
        self.net.validate()?;
        let missing = |p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} does not exist", p.display())))
            }
        };
        match &self.dataset {
            DatasetConfig::Blobs { classes, dims, train_per_class, test_per_class, .. } => {
                if *classes < 2 || *dims == 0 || *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::Config("blobs need >= 2 classes and nonzero sizes".into()));
                }
                if *dims != self.net.input_dim() || *classes != self.net.num_classes() {
                    return Err(Error::Config(format!(
                        "blobs are {classes} classes in {dims} dims, the network expects {} in {}",
                        self.net.num_classes(),
                        self.net.input_dim()
                    )));
                }
            }
            DatasetConfig::Idx { images, labels, test_fraction, .. } => {
                missing(images)?;
                missing(labels)?;
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::Config("test_fraction must be in (0, 1)".into()));
                }
            }
            DatasetConfig::Cifar { train, test, .. } => {
                if train.is_empty() {
                    return Err(Error::Config("no CIFAR training batches listed".into()));
                }
                train.iter().try_for_each(|p| missing(p))?;
                missing(test)?;
            }
        }
        if self.distill.ipc == 0 {
            return Err(Error::Config("ipc must be positive".into()));
        }
        if let Some(m) = &self.distill.mask {
            m.validate()?;
        }
        let c = &self.calibration;
        if c.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if !(c.validation_fraction > 0.0 && c.validation_fraction <= 1.0) {
            return Err(Error::Config("validation_fraction must be in (0, 1]".into()));
        }
        c.methods.iter().try_for_each(MethodConfig::validate)?;
        let a = &self.analysis;
        for r in a.r_sweep.iter().flatten().chain([&a.sweep_ratio]) {
            MaskSpec::fixed(*r).validate()?;
        }
        if a.n_sweep.iter().flatten().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("n_sweep fractions must be in (0, 1]".into()));
        }
        if a.ipc_sweep.iter().flatten().any(|&k| k == 0) {
            return Err(Error::Config("ipc_sweep sizes must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (keys sorted, `output_dir`
    /// dropped), so reordering keys in the TOML file keeps the hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Applies a `dotted.key=value` override; the value is parsed as TOML
    /// and falls back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }
}
