//! Command-line front end for the experiment pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distill_calib::pipeline::{
    default_n_grid, default_r_grid, emit_curves, emit_report, output_root, run_dir_under, run_pipeline, AnalysisConfig,
    Curve, ExperimentConfig, ReportFormat, RunOptions, RunRecord, Stage, OUTPUT_ENV,
};

#[derive(Parser)]
#[command(name = "mdcal", version, about = "Distill, train, calibrate and analyze on seeded configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Replace the config's seed list, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// `dotted.key=value` overrides, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; defaults to the config's `output_dir` or `./runs`.
    #[arg(long, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
    /// Also write SVG charts next to the curve CSVs.
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Mask ratio r over 0.1..0.9.
    R,
    /// Validation fraction over 10%..50%.
    N,
    /// Images per class.
    Ipc,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a synthetic set per seed.
    Distill(RunArgs),
    /// Distill, then train the network on the distilled set.
    Train(RunArgs),
    /// Train, then run every configured calibration method.
    Calibrate(RunArgs),
    /// Calibrate, then run the configured analyses.
    Analyze(RunArgs),
    /// Re-emit tables and curves from a stored run.
    Report {
        /// Run directory or `run_record.json`.
        run: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Curves to emit; defaults to every one the record holds.
        #[arg(long, value_delimiter = ',')]
        curves: Option<Vec<String>>,
        #[arg(long)]
        svg: bool,
    },
    /// Run one calibration sweep.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// IPC values for `--kind ipc`.
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        ipc: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mdcal: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(args: &RunArgs) -> distill_calib::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Returns whether every seed succeeded.
fn execute(args: &RunArgs, cfg: &ExperimentConfig, until: Stage, curves: &[Curve]) -> distill_calib::Result<bool> {
    let root = args.out.clone().unwrap_or_else(|| output_root(cfg));
    let dir = run_dir_under(&root, cfg);
    let record = run_pipeline(
        cfg,
        &RunOptions {
            until,
            output: Some(dir.clone()),
        },
    )?;
    if until >= Stage::Calibrate {
        emit_report(&record, ReportFormat::Csv, &dir)?;
        emit_report(&record, ReportFormat::Json, &dir)?;
    }
    let available: Vec<Curve> = curves.iter().copied().filter(|&c| has_curve(&record, c)).collect();
    emit_curves(&record, &available, &dir.join("curves"), args.svg)?;
    summarize(&record);
    println!("{}", dir.display());
    Ok(record.all_ok())
}

fn has_curve(record: &RunRecord, c: Curve) -> bool {
    record.seeds.iter().any(|s| {
        let a = &s.analysis;
        match c {
            Curve::Reliability => !s.reports.is_empty(),
            Curve::SvdSweep => a.svd_full.is_some(),
            Curve::ExplainedRatio => a.explained_full.is_some(),
            Curve::MaxLogitHist => a.max_logit_ddnn.is_some(),
            Curve::RSweep => !a.r_sweep.is_empty(),
            Curve::NSweep => !a.n_sweep.is_empty(),
            Curve::IpcSweep => !a.ipc_sweep.is_empty(),
        }
    })
}

fn summarize(record: &RunRecord) {
    for s in &record.seeds {
        match &s.status {
            distill_calib::pipeline::SeedStatus::Ok => {
                let acc = s.ddnn_accuracy.map_or("-".into(), |a| format!("{a:.4}"));
                eprintln!("seed {}: ok, stages {}, accuracy {acc}", s.seed, s.stages.join(">"));
            }
            distill_calib::pipeline::SeedStatus::Failed { stage, error } => {
                eprintln!("seed {}: FAILED in {stage}: {error}", s.seed);
            }
        }
    }
    for a in &record.aggregates {
        eprintln!(
            "{:<28} ece {:.4} ± {:.4}  gap {:+.4}  acc {:.4}",
            a.method, a.ece.mean, a.ece.sd, a.signed_gap.mean, a.accuracy.mean
        );
    }
}

fn real_main() -> distill_calib::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Distill(a) => execute(&a, &load(&a)?, Stage::Distill, &[]),
        Command::Train(a) => execute(&a, &load(&a)?, Stage::Train, &[]),
        Command::Calibrate(a) => execute(&a, &load(&a)?, Stage::Calibrate, &[Curve::Reliability]),
        Command::Analyze(a) => execute(&a, &load(&a)?, Stage::Analyze, &Curve::ALL),
        Command::Sweep { run, kind, ipc } => {
            let mut cfg = load(&run)?;
            let keep = AnalysisConfig {
                sweep_ratio: cfg.analysis.sweep_ratio,
                ..AnalysisConfig::default()
            };
            let (analysis, curve) = match kind {
                SweepKind::R => (AnalysisConfig { r_sweep: Some(default_r_grid()), ..keep }, Curve::RSweep),
                SweepKind::N => (AnalysisConfig { n_sweep: Some(default_n_grid()), ..keep }, Curve::NSweep),
                SweepKind::Ipc => (AnalysisConfig { ipc_sweep: Some(ipc), ..keep }, Curve::IpcSweep),
            };
            cfg.analysis = analysis;
            cfg.calibration.methods.clear();
            execute(&run, &cfg, Stage::Analyze, &[curve])
        }
        Command::Report { run, format, curves, svg } => {
            let record = RunRecord::load(&run)?;
            let dir = if run.is_dir() { run.clone() } else { run.parent().map(PathBuf::from).unwrap_or_default() };
            let fmt = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            for p in emit_report(&record, fmt, &dir)? {
                println!("{}", p.display());
            }
            let which: Vec<Curve> = match curves {
                Some(names) => names.iter().map(|n| Curve::parse(n)).collect::<distill_calib::Result<_>>()?,
                None => Curve::ALL.into_iter().filter(|&c| has_curve(&record, c)).collect(),
            };
            for p in emit_curves(&record, &which, &dir.join("curves"), svg)? {
                println!("{}", p.display());
            }
            Ok(record.all_ok())
        }
    }
}
