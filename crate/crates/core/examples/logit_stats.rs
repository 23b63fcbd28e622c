//! Max-logit concentration of full-data and distilled-data networks, and
//! their confidence on uniform-noise inputs.
//!
//!     cargo run --release --example logit_stats

use distill_calib::analysis::{max_logit_stats, ood_confidence_compare};
use distill_calib::data::{apply_normalization, gen_uniform_noise, normalize_dataset, BlobSpec, Blobs};
use distill_calib::distill::{distill_dc, DcConfig};
use distill_calib::nets::{evaluate, init_params, sgd_train, NetSpec, TrainConfig};
use distill_calib::seeds::{self, stream};

fn main() -> distill_calib::Result<()> {
    let seed = 2;
    let blobs = Blobs::new(BlobSpec { classes: 10, dims: 128, spread: 1.0, center_scale: 0.3 }, seed)?;
    let train = normalize_dataset(&blobs.sample(100, &mut seeds::rng(seed, stream::DATA))?)?;
    let test = apply_normalization(
        &blobs.sample(100, &mut seeds::rng(seed, stream::TEST_DATA))?,
        train.normalization.as_ref().unwrap(),
    )?;
    let net = NetSpec::Mlp { input_dim: 128, hidden: vec![64], num_classes: 10 };
    let fdnn = sgd_train(&init_params(&net, seed)?, &train, &TrainConfig { epochs: 30, ..TrainConfig::default() }, seed)?;
    let syn = distill_dc(&train, &net, &DcConfig { synthetic_lr: 0.5, ..DcConfig::default() }, seed)?.to_dataset()?;
    let ddnn = sgd_train(&init_params(&net, seed)?, &syn, &TrainConfig { epochs: 300, ..TrainConfig::default() }, seed)?;
    let noise = gen_uniform_noise(500, 128, -3.0, 3.0, 10, seed)?;

    for (name, p) in [("fdnn", &fdnn.params), ("ddnn", &ddnn.params)] {
        let st = max_logit_stats(&evaluate(p, &test)?.logits, 12)?;
        let ood = ood_confidence_compare(p, &test, &noise, None, 10)?;
        println!(
            "{name}: max logit {:.2} ± {:.2}; confidence ID {:.3} vs noise {:.3}",
            st.mean, st.sd, ood.mean_confidence_id, ood.mean_confidence_ood
        );
        let peak = *st.histogram.counts.iter().max().unwrap_or(&1).max(&1);
        for (i, c) in st.histogram.counts.iter().enumerate() {
            let bar = "#".repeat(c * 40 / peak);
            println!("  {:>7.2} {bar}", st.histogram.edges[i]);
        }
    }
    Ok(())
}
