//! Tables and plottable curves from a run record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{RunRecord, SweepPoint};
use crate::analysis::mean_sd;
use crate::calib::OVER_CALIBRATION_TOLERANCE;
use crate::error::{Error, Result};
use crate::store::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One aggregate row per method, `raw` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub seeds: usize,
    pub raw_ece_mean: f64,
    pub raw_ece_sd: f64,
    pub ece_mean: f64,
    pub ece_sd: f64,
    pub signed_gap_mean: f64,
    pub signed_gap_sd: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub nll_mean: f64,
    pub temperature_mean: f64,
    pub over_calibrated: bool,
    /// Seeds without a result for this method, `;`-separated.
    pub missing_seeds: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub method: String,
    pub mask_ratio: Option<f64>,
    pub temperature: f64,
    pub ece: f64,
    pub signed_gap: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub over_calibrated: bool,
}

pub fn report_rows(record: &RunRecord) -> Vec<ReportRow> {
    let raw = record.aggregate("raw");
    record
        .aggregates
        .iter()
        .map(|a| ReportRow {
            method: a.method.clone(),
            seeds: a.ece.n,
            raw_ece_mean: raw.map_or(f64::NAN, |r| r.ece.mean),
            raw_ece_sd: raw.map_or(f64::NAN, |r| r.ece.sd),
            ece_mean: a.ece.mean,
            ece_sd: a.ece.sd,
            signed_gap_mean: a.signed_gap.mean,
            signed_gap_sd: a.signed_gap.sd,
            accuracy_mean: a.accuracy.mean,
            accuracy_sd: a.accuracy.sd,
            nll_mean: a.nll.mean,
            temperature_mean: a.temperature.mean,
            over_calibrated: a.signed_gap.mean < -OVER_CALIBRATION_TOLERANCE,
            missing_seeds: a.missing_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

pub fn seed_rows(record: &RunRecord) -> Vec<SeedRow> {
    record
        .seeds
        .iter()
        .flat_map(|s| {
            s.reports.iter().map(move |r| SeedRow {
                seed: s.seed,
                method: r.method.clone(),
                mask_ratio: r.mask_ratio,
                temperature: r.temperature,
                ece: r.ece,
                signed_gap: r.signed_gap,
                nll: r.nll,
                accuracy: r.accuracy,
                over_calibrated: r.over_calibrated(),
            })
        })
        .collect()
}

/// Writes `report.csv` + `report_seeds.csv`, or `report.json`, into `dir`.
pub fn emit_report(record: &RunRecord, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = report_rows(record);
    let seeds = seed_rows(record);
    match format {
        ReportFormat::Csv => {
            let a = dir.join("report.csv");
            let b = dir.join("report_seeds.csv");
            write_atomic(&a, &to_csv(&rows)?)?;
            write_atomic(&b, &to_csv(&seeds)?)?;
            Ok(vec![a, b])
        }
        ReportFormat::Json => {
            let p = dir.join("report.json");
            let body = serde_json::json!({
                "config_hash": record.config_hash,
                "partial": record.partial,
                "methods": rows,
                "seeds": seeds,
            });
            let bytes = serde_json::to_vec_pretty(&body).map_err(|e| Error::Serde(e.to_string()))?;
            write_atomic(&p, &bytes)?;
            Ok(vec![p])
        }
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Reliability,
    SvdSweep,
    ExplainedRatio,
    MaxLogitHist,
    RSweep,
    NSweep,
    IpcSweep,
}

impl Curve {
    pub const ALL: [Curve; 7] = [
        Curve::Reliability,
        Curve::SvdSweep,
        Curve::ExplainedRatio,
        Curve::MaxLogitHist,
        Curve::RSweep,
        Curve::NSweep,
        Curve::IpcSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Curve::Reliability => "reliability",
            Curve::SvdSweep => "svd_sweep",
            Curve::ExplainedRatio => "explained_ratio",
            Curve::MaxLogitHist => "max_logit_hist",
            Curve::RSweep => "r_sweep",
            Curve::NSweep => "n_sweep",
            Curve::IpcSweep => "ipc_sweep",
        }
    }

    pub fn parse(s: &str) -> Result<Curve> {
        Curve::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown curve `{s}`")))
    }
}

/// Reliability bins pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub method: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdRow {
    pub source: String,
    pub fraction: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub drop_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedRow {
    pub source: String,
    pub components: usize,
    pub ratio_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub network: String,
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: f64,
    pub seeds: usize,
    pub ece_mean: f64,
    pub ece_sd: f64,
    pub signed_gap_mean: f64,
    pub temperature_mean: f64,
    pub accuracy_mean: f64,
    pub raw_ece_mean: Option<f64>,
}

fn missing(curve: Curve) -> Error {
    Error::usage(format!("the record has no `{}` artifact", curve.name()))
}

pub fn reliability_rows(record: &RunRecord) -> Result<Vec<ReliabilityRow>> {
    let mut out: Vec<ReliabilityRow> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in record.seeds.iter().flat_map(|s| &s.reports) {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for m in methods {
        let reports: Vec<_> = record.seeds.iter().filter_map(|s| s.report(m)).collect();
        let nb = reports[0].bins.len();
        for b in 0..nb {
            let mut count = 0;
            let (mut conf, mut acc) = (0.0, 0.0);
            for r in &reports {
                let bin = &r.bins[b];
                count += bin.count;
                conf += bin.mean_confidence * bin.count as f64;
                acc += bin.accuracy * bin.count as f64;
            }
            let c = count.max(1) as f64;
            out.push(ReliabilityRow {
                method: m.to_string(),
                bin: b,
                lower: reports[0].bins[b].lower,
                upper: reports[0].bins[b].upper,
                count,
                mean_confidence: if count > 0 { conf / c } else { 0.0 },
                accuracy: if count > 0 { acc / c } else { 0.0 },
            });
        }
    }
    if out.is_empty() {
        return Err(missing(Curve::Reliability));
    }
    Ok(out)
}

pub fn svd_rows(record: &RunRecord) -> Result<Vec<SvdRow>> {
    let mut out = Vec::new();
    for source in ["full", "distilled"] {
        let results: Vec<_> = record
            .seeds
            .iter()
            .filter_map(|s| match source {
                "full" => s.analysis.svd_full.as_ref(),
                _ => s.analysis.svd_distilled.as_ref(),
            })
            .collect();
        let Some(first) = results.first() else { continue };
        for (i, &f) in first.fractions.iter().enumerate() {
            let accs: Vec<f64> = results.iter().map(|r| r.mean[i]).collect();
            let drops: Vec<f64> = results.iter().map(|r| r.mean[0] - r.mean[i]).collect();
            let (m, sd) = mean_sd(&accs);
            out.push(SvdRow {
                source: source.into(),
                fraction: f,
                accuracy_mean: m,
                accuracy_sd: sd,
                drop_mean: mean_sd(&drops).0,
            });
        }
    }
    if out.is_empty() {
        return Err(missing(Curve::SvdSweep));
    }
    Ok(out)
}

pub fn explained_rows(record: &RunRecord) -> Result<Vec<ExplainedRow>> {
    let mut out = Vec::new();
    for source in ["full", "distilled"] {
        let curves: Vec<&Vec<f64>> = record
            .seeds
            .iter()
            .filter_map(|s| match source {
                "full" => s.analysis.explained_full.as_ref(),
                _ => s.analysis.explained_distilled.as_ref(),
            })
            .collect();
        let len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
        for k in 0..len {
            let vals: Vec<f64> = curves.iter().map(|c| *c.get(k).unwrap_or(&1.0)).collect();
            out.push(ExplainedRow {
                source: source.into(),
                components: k + 1,
                ratio_mean: mean_sd(&vals).0,
            });
        }
    }
    if out.is_empty() {
        return Err(missing(Curve::ExplainedRatio));
    }
    Ok(out)
}

pub fn hist_rows(record: &RunRecord) -> Result<Vec<HistRow>> {
    let mut out = Vec::new();
    for s in &record.seeds {
        for (name, stats) in [("ddnn", &s.analysis.max_logit_ddnn), ("fdnn", &s.analysis.max_logit_fdnn)] {
            let Some(st) = stats else { continue };
            let h = &st.histogram;
            for (i, &c) in h.counts.iter().enumerate() {
                out.push(HistRow {
                    network: name.into(),
                    seed: s.seed,
                    lower: h.edges[i],
                    upper: h.edges[i + 1],
                    count: c,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(missing(Curve::MaxLogitHist));
    }
    Ok(out)
}

/// Sweep points averaged across seeds, one row per `x`.
pub fn sweep_rows(record: &RunRecord, curve: Curve) -> Result<Vec<SweepRow>> {
    let pick = |s: &super::record::SeedRecord| -> Vec<SweepPoint> {
        match curve {
            Curve::RSweep => s.analysis.r_sweep.clone(),
            Curve::NSweep => s.analysis.n_sweep.clone(),
            _ => s.analysis.ipc_sweep.clone(),
        }
    };
    let per_seed: Vec<Vec<SweepPoint>> = record.seeds.iter().map(pick).filter(|v| !v.is_empty()).collect();
    let Some(first) = per_seed.first() else { return Err(missing(curve)) };
    let rows = (0..first.len())
        .map(|i| {
            let pts: Vec<&SweepPoint> = per_seed.iter().filter_map(|v| v.get(i)).collect();
            let col = |f: fn(&SweepPoint) -> f64| pts.iter().map(|p| f(p)).collect::<Vec<_>>();
            let (ece_mean, ece_sd) = mean_sd(&col(|p| p.ece));
            let raw: Vec<f64> = pts.iter().filter_map(|p| p.raw_ece).collect();
            SweepRow {
                x: first[i].x,
                seeds: pts.len(),
                ece_mean,
                ece_sd,
                signed_gap_mean: mean_sd(&col(|p| p.signed_gap)).0,
                temperature_mean: mean_sd(&col(|p| p.temperature)).0,
                accuracy_mean: mean_sd(&col(|p| p.accuracy)).0,
                raw_ece_mean: (!raw.is_empty()).then(|| mean_sd(&raw).0),
            }
        })
        .collect();
    Ok(rows)
}

/// Writes `<dir>/<curve>.csv`, plus an SVG line chart when `svg` is set.
pub fn emit_curves(record: &RunRecord, which: &[Curve], dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &c in which {
        let (csv, series): (Vec<u8>, Vec<Series>) = match c {
            Curve::Reliability => {
                let rows = reliability_rows(record)?;
                let series = group(&rows, |r| r.method.clone(), |r| (r.mean_confidence, r.accuracy), |r| r.count > 0);
                (to_csv(&rows)?, series)
            }
            Curve::SvdSweep => {
                let rows = svd_rows(record)?;
                (to_csv(&rows)?, group(&rows, |r| r.source.clone(), |r| (r.fraction, r.accuracy_mean), |_| true))
            }
            Curve::ExplainedRatio => {
                let rows = explained_rows(record)?;
                (to_csv(&rows)?, group(&rows, |r| r.source.clone(), |r| (r.components as f64, r.ratio_mean), |_| true))
            }
            Curve::MaxLogitHist => {
                let rows = hist_rows(record)?;
                let series = group(
                    &rows,
                    |r| format!("{} seed {}", r.network, r.seed),
                    |r| (0.5 * (r.lower + r.upper), r.count as f64),
                    |_| true,
                );
                (to_csv(&rows)?, series)
            }
            Curve::RSweep | Curve::NSweep | Curve::IpcSweep => {
                let rows = sweep_rows(record, c)?;
                (to_csv(&rows)?, group(&rows, |_| "mts ece".into(), |r| (r.x, r.ece_mean), |_| true))
            }
        };
        let p = dir.join(format!("{}.csv", c.name()));
        write_atomic(&p, &csv)?;
        written.push(p);
        if svg {
            let p = dir.join(format!("{}.svg", c.name()));
            write_atomic(&p, line_chart(c.name(), &series).as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

type Series = (String, Vec<(f64, f64)>);

fn group<T>(rows: &[T], key: impl Fn(&T) -> String, xy: impl Fn(&T) -> (f64, f64), keep: impl Fn(&T) -> bool) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows.iter().filter(|r| keep(r)) {
        let k = key(r);
        match out.iter_mut().find(|(n, _)| *n == k) {
            Some((_, pts)) => pts.push(xy(r)),
            None => out.push((k, vec![xy(r)])),
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A self-contained SVG line chart with a legend.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for (v, anchor_x) in [(x0, pad), (x1, w - pad)] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{v:.3}</text>"#, h - pad + 16.0);
    }
    for (v, y) in [(y0, h - pad), (y1, pad)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, pad - 4.0);
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.2} {:.2}", if j == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            w - pad - 120.0,
            pad + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
