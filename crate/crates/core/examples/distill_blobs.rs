//! Gradient-matching distillation of Gaussian blobs, plain and masked, and
//! the accuracy of networks trained on each distilled set.
//!
//!     cargo run --release --example distill_blobs [out_dir]

use distill_calib::data::{apply_normalization, normalize_dataset, BlobSpec, Blobs};
use distill_calib::distill::{distill_dc, DcConfig, MaskSpec, SyntheticSet};
use distill_calib::nets::{evaluate, init_params, sgd_train, NetSpec, TrainConfig};
use distill_calib::seeds::{self, stream};

fn main() -> distill_calib::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let seed = 0;
    let blobs = Blobs::new(BlobSpec { classes: 5, dims: 32, spread: 1.0, center_scale: 0.6 }, seed)?;
    let train = normalize_dataset(&blobs.sample(100, &mut seeds::rng(seed, stream::DATA))?)?;
    let test = apply_normalization(
        &blobs.sample(100, &mut seeds::rng(seed, stream::TEST_DATA))?,
        train.normalization.as_ref().unwrap(),
    )?;
    let net = NetSpec::Mlp { input_dim: 32, hidden: vec![32], num_classes: 5 };
    let tc = TrainConfig { epochs: 200, ..TrainConfig::default() };

    for mask in [None, Some(MaskSpec::fixed(0.1)), Some(MaskSpec::dynamic(0.05, 0.2))] {
        let cfg = DcConfig { ipc: 10, steps: 100, synthetic_lr: 0.5, mask, ..DcConfig::default() };
        let syn = distill_dc(&train, &net, &cfg, seed)?;
        let ddnn = sgd_train(&init_params(&net, seed)?, &syn.to_dataset()?, &tc, seed)?;
        let acc = evaluate(&ddnn.params, &test)?.accuracy;
        let tag = match mask {
            None => "plain".to_string(),
            Some(m) => format!("{:?} r={}", m.mode, m.ratio),
        };
        println!("{tag:<40} {} rows, test accuracy {acc:.3}", syn.labels.len());
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| distill_calib::Error::io(dir, e))?;
            let path = dir.join(format!("synthetic-{}.ntf", if mask.is_some() { "mdt" } else { "plain" }));
            syn.to_named()?.save(&path)?;
            let back = SyntheticSet::from_named(&distill_calib::store::NamedTensors::load(&path)?)?;
            assert_eq!(back.images, syn.images);
        }
    }
    Ok(())
}
