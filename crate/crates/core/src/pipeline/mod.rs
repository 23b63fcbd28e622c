//! Configuration-driven experiments with persisted, reproducible records.

mod config;
mod record;
mod report;
mod run;

pub use config::{
    default_n_grid, default_r_grid, AnalysisConfig, Backbone, CalibrationConfig, DatasetConfig, DistillConfig,
    ExperimentConfig, ExpertConfig, MethodConfig, SvdSweepConfig, TrainSection,
};
pub use record::{
    MethodAggregate, RunRecord, SeedAnalysis, SeedRecord, SeedStatus, Stat, SweepPoint, Timing, RECORD_FILE,
};
pub use report::{
    emit_curves, emit_report, line_chart, reliability_rows, report_rows, seed_rows, sweep_rows, to_csv, Curve,
    ReportFormat, ReportRow, SeedRow, SweepRow,
};
pub use run::{
    distill, load_data, output_root, run_dir, run_dir_under, run_pipeline, run_seed, train_net, validation_split, RunOptions, Stage,
    OUTPUT_ENV,
};
