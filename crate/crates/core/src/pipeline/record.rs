//! Run records and their aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::analysis::{mean_sd, LogitStats, OodReport, SvdSweepResult};
use crate::calib::CalibrationReport;
use crate::error::{Error, Result};
use crate::store::write_atomic;

pub const RECORD_FILE: &str = "run_record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedStatus {
    Ok,
    Failed { stage: String, error: String },
}

/// One point of a calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Mask ratio, validation fraction or IPC, depending on the sweep.
    pub x: f64,
    pub temperature: f64,
    pub ece: f64,
    pub signed_gap: f64,
    pub accuracy: f64,
    /// Uncalibrated ECE; filled by the IPC sweep, where it changes with `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_ece: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedAnalysis {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svd_full: Option<SvdSweepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svd_distilled: Option<SvdSweepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explained_full: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explained_distilled: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_logit_ddnn: Option<LogitStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_logit_fdnn: Option<LogitStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub r_sweep: Vec<SweepPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub n_sweep: Vec<SweepPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ipc_sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub status: SeedStatus,
    /// Stages that finished, in order.
    pub stages: Vec<String>,
    pub ddnn_accuracy: Option<f64>,
    pub fdnn_accuracy: Option<f64>,
    /// The uncalibrated DDNN comes first, as method `raw`.
    pub reports: Vec<CalibrationReport>,
    /// Raw report of the full-data network, when trained.
    pub fdnn_report: Option<CalibrationReport>,
    pub analysis: SeedAnalysis,
}

impl SeedRecord {
    pub fn new(seed: u64) -> Self {
        SeedRecord {
            seed,
            status: SeedStatus::Ok,
            stages: Vec::new(),
            ddnn_accuracy: None,
            fdnn_accuracy: None,
            reports: Vec::new(),
            fdnn_report: None,
            analysis: SeedAnalysis::default(),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == SeedStatus::Ok
    }

    pub fn report(&self, method: &str) -> Option<&CalibrationReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let (mean, sd) = mean_sd(values);
        Some(Stat { mean, sd, n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub ece: Stat,
    pub signed_gap: Stat,
    pub nll: Stat,
    pub accuracy: Stat,
    pub temperature: Stat,
    /// Seeds of the config with no report for this method.
    pub missing_seeds: Vec<u64>,
}

/// Timing is kept apart from the payload so records compare by content.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub per_seed_secs: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRecord>,
    pub aggregates: Vec<MethodAggregate>,
    /// True when any seed failed.
    pub partial: bool,
    pub timing: Timing,
}

impl RunRecord {
    pub fn assemble(config: ExperimentConfig, seeds: Vec<SeedRecord>, timing: Timing) -> Self {
        let aggregates = aggregate(&config, &seeds);
        RunRecord {
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            partial: seeds.iter().any(|s| !s.ok()),
            config,
            seeds,
            aggregates,
            timing,
        }
    }

    /// Canonical JSON of everything except timing.
    pub fn payload(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("timing");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn seed(&self, seed: u64) -> Option<&SeedRecord> {
        self.seeds.iter().find(|s| s.seed == seed)
    }

    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn all_ok(&self) -> bool {
        !self.partial
    }

    /// Writes `run_record.json` into `dir` through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        write_atomic(&dir.join(RECORD_FILE), &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Serde(format!("{}: {e}", p.display())))
    }
}

/// Mean and sample sd of every method's metrics over the seeds reporting it.
fn aggregate(config: &ExperimentConfig, seeds: &[SeedRecord]) -> Vec<MethodAggregate> {
    let mut methods: Vec<String> = Vec::new();
    for r in seeds.iter().flat_map(|s| &s.reports) {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    methods
        .into_iter()
        .filter_map(|m| {
            let reports: Vec<&CalibrationReport> = seeds.iter().filter_map(|s| s.report(&m)).collect();
            let col = |f: fn(&CalibrationReport) -> f64| reports.iter().map(|r| f(r)).collect::<Vec<_>>();
            let missing_seeds = config
                .seeds
                .iter()
                .copied()
                .filter(|&sd| seeds.iter().find(|s| s.seed == sd).and_then(|s| s.report(&m)).is_none())
                .collect();
            Some(MethodAggregate {
                ece: Stat::of(&col(|r| r.ece))?,
                signed_gap: Stat::of(&col(|r| r.signed_gap))?,
                nll: Stat::of(&col(|r| r.nll))?,
                accuracy: Stat::of(&col(|r| r.accuracy))?,
                temperature: Stat::of(&col(|r| r.temperature))?,
                method: m,
                missing_seeds,
            })
        })
        .collect()
}
