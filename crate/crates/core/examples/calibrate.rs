//! Temperature scaling versus masked temperature scaling on a network
//! trained on a distilled set, with a reliability table.
//!
//!     cargo run --release --example calibrate

use distill_calib::calib::{calibration_report, fit_temperature, FitMode, FitSpec};
use distill_calib::data::{apply_normalization, normalize_dataset, split_per_class, BlobSpec, Blobs, SplitSpec};
use distill_calib::distill::{distill_dc, DcConfig, MaskSpec};
use distill_calib::nets::{evaluate, init_params, sgd_train, NetSpec, TrainConfig};
use distill_calib::seeds::{self, stream};

fn main() -> distill_calib::Result<()> {
    let seed = 1;
    let blobs = Blobs::new(BlobSpec { classes: 10, dims: 128, spread: 1.0, center_scale: 0.3 }, seed)?;
    let train = normalize_dataset(&blobs.sample(100, &mut seeds::rng(seed, stream::DATA))?)?;
    let test = apply_normalization(
        &blobs.sample(100, &mut seeds::rng(seed, stream::TEST_DATA))?,
        train.normalization.as_ref().unwrap(),
    )?;
    let net = NetSpec::Mlp { input_dim: 128, hidden: vec![64], num_classes: 10 };
    let syn = distill_dc(&train, &net, &DcConfig { steps: 200, synthetic_lr: 0.5, ..DcConfig::default() }, seed)?;
    let syn = syn.to_dataset()?;
    let ddnn = sgd_train(&init_params(&net, seed)?, &syn, &TrainConfig { epochs: 300, ..TrainConfig::default() }, seed)?;
    let logits = evaluate(&ddnn.params, &test)?.logits;
    let (val, _) = split_per_class(&syn, &SplitSpec::per_class(0.1, seed))?;

    let raw = calibration_report(&logits, test.labels(), 1.0, 15, "raw")?;
    println!("{:<12} {:>7} {:>7} {:>8}", "method", "T", "ECE", "gap");
    println!("{:<12} {:>7.3} {:>7.4} {:>+8.4}", "raw", 1.0, raw.ece, raw.signed_gap);
    let mut fits = vec![("ts".to_string(), FitSpec::default())];
    fits.push(("ts 1-step".into(), FitSpec { mode: FitMode::OneStep, ..FitSpec::default() }));
    for r in [0.1, 0.3, 0.5, 0.7] {
        fits.push((format!("mts r={r}"), FitSpec { mask: Some(MaskSpec::fixed(r)), ..FitSpec::default() }));
    }
    for (name, spec) in fits {
        let model = fit_temperature(&ddnn.params, &val, &spec, seed)?;
        let rep = calibration_report(&logits, test.labels(), model.temperature, 15, &name)?;
        let flag = if rep.over_calibrated() { "  over-calibrated" } else { "" };
        println!("{name:<12} {:>7.3} {:>7.4} {:>+8.4}{flag}", model.temperature, rep.ece, rep.signed_gap);
        for w in &model.trace.warnings {
            println!("    warning: {w}");
        }
    }
    println!("\nreliability (raw):");
    for b in raw.bins.iter().filter(|b| b.count > 0) {
        println!("  ({:.2}, {:.2}]  n={:<4} conf {:.3}  acc {:.3}", b.lower, b.upper, b.count, b.mean_confidence, b.accuracy);
    }
    Ok(())
}
