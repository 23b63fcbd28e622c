//! Acceptance suite: one pass/fail line per criterion.
//!
//!     cargo test --release --test acceptance

mod common;

use std::path::PathBuf;
use std::time::Instant;

use distill_calib::analysis::{singular_values, svd_truncate};
use distill_calib::autodiff::MetaRoute;
use distill_calib::calib::{
    compute_ece, fit_temperature, fit_temperature_on_logits, nll, reliability_bins, FitMode,
    FitSpec,
};
use distill_calib::data::{gen_blobs, BlobSpec};
use distill_calib::distill::{
    dc_loss, dc_meta_grad, make_mask, mtt_loss, mtt_meta_grad, record_trajectory, MaskSpec,
};
use distill_calib::nets::{init_params, sgd_train, NetSpec, TrainConfig};
use distill_calib::pipeline::{
    default_n_grid, default_r_grid, emit_curves, run_pipeline, validation_split, Curve, ExperimentConfig,
    MethodConfig, RunOptions, RunRecord, Stage,
};
use distill_calib::seeds::{self, stream};
use distill_calib::tensor::relative_error;
use distill_calib::Tensor;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(file: &str) -> ExperimentConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(file);
    ExperimentConfig::load(p).expect("config loads")
}

fn run(cfg: &ExperimentConfig) -> RunRecord {
    let rec = run_pipeline(cfg, &RunOptions::default()).expect("pipeline runs");
    for s in &rec.seeds {
        assert!(s.ok(), "seed {} failed: {:?}", s.seed, s.status);
    }
    rec
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let cases = common::primitive_cases();
    let mut worst = (0.0f64, "");
    for seed in 0..100 {
        for c in &cases {
            let e = common::primitive_error(c, seed);
            if e > worst.0 {
                worst = (e, c.name);
            }
        }
    }
    let mut meta_worst = 0.0f64;
    let spec = BlobSpec { classes: 3, dims: 5, spread: 0.7, center_scale: 1.5 };
    let net = NetSpec::Mlp { input_dim: 5, hidden: vec![6], num_classes: 3 };
    for i in 0..20u64 {
        let real = gen_blobs(&spec, 4, 100 + i).unwrap();
        let syn = gen_blobs(&spec, 2, 200 + i).unwrap();
        let params = init_params(&net, i).unwrap();
        let mask = (i % 2 == 1).then(|| MaskSpec::fixed(0.2));
        let dc = |route| {
            let mut rng = seeds::rng(i, stream::MASK);
            dc_meta_grad(&params, real.features(), real.labels(), syn.features(), syn.labels(), mask.as_ref(), &mut rng, route)
                .unwrap()
        };
        let (e, f) = (dc(MetaRoute::Exact), dc(MetaRoute::FiniteDifference { h: 1e-5 }));
        meta_worst = meta_worst.max(relative_error(e.grad.data(), f.grad.data(), 1e-8));

        let tc = TrainConfig { epochs: 2, lr: 0.1, batch_size: 6, ..TrainConfig::default() };
        let traj = record_trajectory(&net, &real, &tc, 1, i).unwrap();
        let n = 1 + (i as usize % 3);
        let mtt = |route| {
            let mut rng = seeds::rng(i, stream::MASK);
            mtt_meta_grad(syn.features(), syn.labels(), &traj, 0, 1, n, 0.1, mask.as_ref(), &mut rng, route).unwrap()
        };
        let (e, f) = (mtt(MetaRoute::Exact), mtt(MetaRoute::FiniteDifference { h: 1e-5 }));
        meta_worst = meta_worst.max(relative_error(e.grad.data(), f.grad.data(), 1e-8));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 <= 1e-4 && meta_worst <= 1e-3 && secs < 120.0,
        format!(
            "{} primitives x 100 instances, worst {:.1e} ({}); meta-gradients x 20, worst {:.1e}; {secs:.1}s",
            cases.len(),
            worst.0,
            worst.1,
            meta_worst
        ),
    )
}

fn c2_identity() -> Outcome {
    let spec = BlobSpec { classes: 3, dims: 8, spread: 1.0, center_scale: 1.0 };
    let ds = gen_blobs(&spec, 20, 0).unwrap();
    let net = NetSpec::Mlp { input_dim: 8, hidden: vec![6], num_classes: 3 };
    let p = sgd_train(&init_params(&net, 0).unwrap(), &ds, &TrainConfig { epochs: 30, ..TrainConfig::default() }, 0)
        .unwrap()
        .params;
    let mut ts_same = true;
    for seed in 0..5 {
        for mode in [FitMode::Converge, FitMode::OneStep] {
            let ts = fit_temperature(&p, &ds, &FitSpec { mode, ..FitSpec::default() }, seed).unwrap();
            let mts = fit_temperature(&p, &ds, &FitSpec { mode, mask: Some(MaskSpec::fixed(0.0)), ..FitSpec::default() }, seed)
                .unwrap();
            ts_same &= ts.temperature.to_bits() == mts.temperature.to_bits();
        }
    }
    let syn = gen_blobs(&spec, 2, 1).unwrap();
    let zero = MaskSpec::fixed(0.0);
    let mut loss_same = true;
    for seed in 0..5 {
        let th = init_params(&net, seed).unwrap();
        let mut r1 = seeds::rng(seed, stream::MASK);
        let mut r2 = seeds::rng(seed, stream::MASK);
        let a = dc_loss(&th, ds.features(), ds.labels(), syn.features(), syn.labels(), None, &mut r1).unwrap();
        let b = dc_loss(&th, ds.features(), ds.labels(), syn.features(), syn.labels(), Some(&zero), &mut r2).unwrap();
        loss_same &= a.to_bits() == b.to_bits();
        let traj = record_trajectory(&net, &ds, &TrainConfig { epochs: 1, batch_size: 10, ..TrainConfig::default() }, 2, seed)
            .unwrap();
        let a = mtt_loss(syn.features(), syn.labels(), &traj, 0, 1, 2, 0.05, None, &mut r1).unwrap();
        let b = mtt_loss(syn.features(), syn.labels(), &traj, 0, 1, 2, 0.05, Some(&zero), &mut r2).unwrap();
        loss_same &= a.to_bits() == b.to_bits();
    }
    let mut card = true;
    let mut rng = seeds::rng(0, stream::MASK);
    for d in 1..=300usize {
        for k in 0..=9usize {
            let m = make_mask(d, &MaskSpec::fixed(k as f64 / 10.0), &mut rng).unwrap();
            let zeros = m.data().iter().filter(|&&v| v == 0.0).count();
            card &= zeros == k * d / 10;
        }
    }
    outcome(
        ts_same && loss_same && card,
        format!("MTS(r=0) bitwise TS: {ts_same}; masked losses at r=0 bitwise: {loss_same}; mask cardinality floor(rD) for D<=300: {card}"),
    )
}

fn c3_ece() -> Outcome {
    let mut rng = seeds::rng(3, stream::ANALYSIS);
    let mut exact = true;
    for _ in 0..1000 {
        let n = rng.gen_range(0..120);
        let bins = [1, 5, 10, 15, 20][rng.gen_range(0..5)];
        let conf: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => rng.gen_range(0..=bins) as f64 / bins as f64,
                _ => rng.gen_range(0.0..=1.0),
            })
            .collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let got = compute_ece(&reliability_bins(&conf, &correct, bins).unwrap(), n);
        exact &= got.to_bits() == common::ece_oracle(&conf, &correct, bins).to_bits();
    }
    let hand = compute_ece(&reliability_bins(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, true], 15).unwrap(), 4);
    outcome(
        exact && (hand - 0.4).abs() < 1e-12,
        format!("1000 random sets bitwise equal to the brute-force oracle: {exact}; hand case {hand}"),
    )
}

fn c4_temperature() -> Outcome {
    let mut rng = seeds::rng(4, stream::ANALYSIS);
    // The sampled labels make `base` calibrated only up to O(1/sqrt(n)) noise in
    // its own best temperature, which scaling by c multiplies.
    let (n, k) = (60_000, 5);
    let base: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-2.5..2.5)).collect();
    // labels drawn from softmax(base) make the base logits calibrated
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let row = &base[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
            let mut u = rng.gen_range(0.0..e.iter().sum::<f64>());
            e.iter()
                .position(|&p| {
                    u -= p;
                    u <= 0.0
                })
                .unwrap_or(k - 1)
        })
        .collect();
    let mut details = Vec::new();
    let mut pass = true;
    for c in [2.0, 3.0, 5.0] {
        let logits = Tensor::new(vec![n, k], base.iter().map(|z| z * c).collect()).unwrap();
        let fit = fit_temperature_on_logits(&logits, &labels, &FitSpec::default()).unwrap().temperature;
        let argmin = |ts: &mut dyn Iterator<Item = f64>| {
            ts.map(|t| (t, nll(&logits, &labels, t).unwrap()))
                .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0
        };
        let coarse = argmin(&mut (5..=2000).map(|i| i as f64 * 1e-2));
        let grid = argmin(&mut (-100..=100).map(|i| coarse + i as f64 * 1e-4));
        pass &= (fit - c).abs() <= 0.1 && (fit - grid).abs() <= 2e-3;
        details.push(format!("c={c}: T={fit:.4} (grid {grid:.3})"));
    }
    outcome(pass, details.join(", "))
}

struct BlobRuns {
    record: RunRecord,
}

fn best_mts(s: &distill_calib::pipeline::SeedRecord) -> &distill_calib::calib::CalibrationReport {
    s.reports
        .iter()
        .filter(|r| r.method.starts_with("mts("))
        .min_by(|a, b| a.ece.total_cmp(&b.ece))
        .expect("mts rows")
}

fn c5_overconfidence(runs: &BlobRuns) -> Outcome {
    let mut hits = 0;
    let mut rows = Vec::new();
    for s in &runs.record.seeds {
        let gap = s.report("raw").unwrap().signed_gap;
        let dd = s.analysis.max_logit_ddnn.as_ref().unwrap().sd;
        let fd = s.analysis.max_logit_fdnn.as_ref().unwrap().sd;
        hits += (gap > 0.0 && dd < fd) as usize;
        rows.push(format!("seed {}: gap {gap:+.4}, sd {dd:.2} vs {fd:.2}", s.seed));
    }
    outcome(hits >= 2, format!("{hits}/3 seeds [{}]", rows.join("; ")))
}

fn c6_mts(runs: &BlobRuns) -> Outcome {
    let (mut a, mut b) = (0, 0);
    let mut rows = Vec::new();
    for s in &runs.record.seeds {
        let ts = s.report("ts").unwrap();
        let m = best_mts(s);
        let ls = s.report("label_smoothing(eps=0.1)").unwrap();
        a += (m.ece <= ts.ece && m.signed_gap >= -0.02) as usize;
        b += (ls.signed_gap < m.signed_gap) as usize;
        rows.push(format!(
            "seed {}: {} ECE {:.4} vs TS {:.4}, gap {:+.4}; LS gap {:+.4}",
            s.seed, m.method, m.ece, ts.ece, m.signed_gap, ls.signed_gap
        ));
    }
    outcome(a >= 2 && b >= 2, format!("MTS {a}/3, LS {b}/3 [{}]", rows.join("; ")))
}

fn eckart_young() -> f64 {
    let mut rng = seeds::rng(7, stream::ANALYSIS);
    let mut worst = 0.0f64;
    for (n, d) in [(12, 5), (6, 9), (30, 30)] {
        let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let sv = singular_values(&x).unwrap();
        for frac in [0.1, 0.2, 0.5] {
            let t = svd_truncate(&x, frac).unwrap();
            let rank = sv.iter().filter(|&&s| s > sv[0] * n.max(d) as f64 * f64::EPSILON).count();
            let dropped = ((frac * rank as f64) - 1e-9).ceil() as usize;
            let expect = sv[..dropped].iter().map(|s| s * s).sum::<f64>().sqrt();
            let err = x.zip_map(&t, |a, b| a - b).unwrap().sq_norm().sqrt();
            worst = worst.max((err - expect).abs());
        }
    }
    worst
}

fn svd_drop(s: &distill_calib::pipeline::SeedRecord, distilled: bool, fracs: &[f64]) -> f64 {
    let r = if distilled { &s.analysis.svd_distilled } else { &s.analysis.svd_full };
    let r = r.as_ref().unwrap();
    let drops: Vec<f64> = fracs
        .iter()
        .map(|f| {
            let i = r.fractions.iter().position(|x| (x - f).abs() < 1e-12).unwrap();
            r.mean[0] - r.mean[i]
        })
        .collect();
    drops.iter().sum::<f64>() / drops.len() as f64
}

fn c7_svd(plain: &RunRecord) -> Outcome {
    let mut hits = 0;
    let mut rows = Vec::new();
    for s in &plain.seeds {
        let (dd, fd) = (svd_drop(s, true, &[0.2]), svd_drop(s, false, &[0.2]));
        hits += (dd > fd) as usize;
        rows.push(format!("seed {}: distilled {dd:.3} vs full {fd:.3}", s.seed));
    }
    let ey = eckart_young();
    outcome(
        hits >= 2 && ey <= 1e-8,
        format!("drop at 20%: {hits}/3 [{}]; Eckart-Young worst {ey:.1e}", rows.join("; ")),
    )
}

fn c8_mdt(plain: &RunRecord, mdt: &RunRecord) -> Outcome {
    let acc = |r: &RunRecord| r.seeds.iter().map(|s| s.ddnn_accuracy.unwrap()).sum::<f64>() / r.seeds.len() as f64;
    let (ap, am) = (acc(plain), acc(mdt));
    let sweep = [0.1, 0.15, 0.2];
    let mut hits = 0;
    let mut rows = Vec::new();
    for (p, m) in plain.seeds.iter().zip(&mdt.seeds) {
        let (dp, dm) = (svd_drop(p, true, &sweep), svd_drop(m, true, &sweep));
        hits += (dm <= dp) as usize;
        rows.push(format!("seed {}: MDT {dm:.3} vs plain {dp:.3}", p.seed));
    }
    outcome(
        (ap - am).abs() <= 0.02 && hits >= 2,
        format!(
            "accuracy plain {ap:.4} vs MDT {am:.4} (|diff| {:.4}); sweep drop {hits}/3 [{}]",
            (ap - am).abs(),
            rows.join("; ")
        ),
    )
}

fn c9_ablation() -> Outcome {
    let mut cfg = config("blobs_dc.toml");
    cfg.calibration.methods = vec![MethodConfig::Ts { mode: FitMode::Converge }];
    cfg.analysis.fdnn = false;
    cfg.analysis.max_logit_bins = None;
    cfg.analysis.r_sweep = Some(default_r_grid());
    cfg.analysis.n_sweep = Some(default_n_grid());
    let rec = run(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_curves(&rec, &[Curve::RSweep, Curve::NSweep], dir.path(), true).unwrap();
    let count = |name: &str| {
        let p = files.iter().find(|p| p.ends_with(name)).unwrap();
        csv::Reader::from_path(p).unwrap().records().count()
    };
    let (r_rows, n_rows) = (count("r_sweep.csv"), count("n_sweep.csv"));
    let rows = distill_calib::pipeline::sweep_rows(&rec, Curve::NSweep).unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.ece_mean).collect();
    let variation = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
    let seed_sd = rows.iter().map(|r| r.ece_sd).sum::<f64>() / rows.len() as f64;
    outcome(
        r_rows == 9 && n_rows == 5 && variation <= 2.0 * seed_sd,
        format!("r-sweep {r_rows} rows, n-sweep {n_rows} rows; MTS ECE variation over N {variation:.4} vs 2x seed sd {:.4}", 2.0 * seed_sd),
    )
}

fn c10_ipc1() -> Outcome {
    let mut cfg = config("blobs_dc.toml");
    cfg.distill.ipc = 1;
    cfg.analysis.fdnn = false;
    cfg.analysis.max_logit_bins = None;
    let rec = run_pipeline(&cfg, &RunOptions { until: Stage::Calibrate, output: None }).unwrap();
    let ok = rec.all_ok();
    let finite = rec.seeds.iter().all(|s| {
        s.reports
            .iter()
            .filter(|r| r.method.starts_with("mts"))
            .all(|r| r.ece.is_finite() && r.temperature.is_finite() && r.nll.is_finite())
    });
    let k = 10;
    let syn = distill_calib::data::LabeledDataset::new(
        "one-per-class",
        Tensor::zeros(&[k, 4]),
        (0..k).collect(),
        k,
    )
    .unwrap();
    let whole = validation_split(&syn, 0.1, 0).unwrap().len() == k;
    let m = rec.aggregate("mts(r=0.3)").map(|a| a.ece.mean).unwrap_or(f64::NAN);
    outcome(
        ok && finite && whole,
        format!("all seeds ok: {ok}; MTS reports finite: {finite} (mts r=0.3 ECE {m:.4}); full set used as validation: {whole}"),
    )
}

fn c11_reproducible(blobs: &RunRecord) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    blobs.save(dir.path()).unwrap();
    let loaded = RunRecord::load(dir.path()).unwrap();
    let again = run(&loaded.config);
    let same_blobs = again.payload() == blobs.payload() && loaded.payload() == blobs.payload();
    let mut tiny = ExperimentConfig::from_toml_str(&common::tiny_blobs_config(&[3, 4])).unwrap();
    tiny.distill.backbone = distill_calib::pipeline::Backbone::Mtt;
    tiny.distill.experts.epochs = 2;
    tiny.distill.experts.interval = 2;
    tiny.distill.mtt.steps = 5;
    tiny.distill.mask = Some(MaskSpec::fixed(0.2));
    tiny.calibration.methods.push(MethodConfig::Mixup { alpha: 0.3 });
    let a = run(&tiny);
    let b = run(&tiny);
    let same_tiny = a.payload() == b.payload();
    outcome(
        same_blobs && same_tiny,
        format!("blobs record re-executed from stored config: {same_blobs}; masked MTT config run twice: {same_tiny}"),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, c1_gradients());
    report(2, c2_identity());
    report(3, c3_ece());
    report(4, c4_temperature());
    let blobs = BlobRuns { record: run(&config("blobs_dc.toml")) };
    report(5, c5_overconfidence(&blobs));
    report(6, c6_mts(&blobs));
    let plain = run(&config("digits_mtt.toml"));
    let mut mdt_cfg = config("digits_mtt.toml");
    mdt_cfg.distill.mask = Some(MaskSpec::fixed(0.1));
    let mdt = run(&mdt_cfg);
    report(7, c7_svd(&plain));
    report(8, c8_mdt(&plain, &mdt));
    report(9, c9_ablation());
    report(10, c10_ipc1());
    report(11, c11_reproducible(&blobs.record));
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
