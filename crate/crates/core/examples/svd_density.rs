//! How much accuracy is lost when the largest singular values of the
//! training matrix are removed, for full and distilled digits.
//!
//!     cargo run --release --example svd_density

use distill_calib::analysis::{explained_ratio, svd_accuracy_sweep, svd_truncate_dataset, SvdLayout};
use distill_calib::data::{apply_normalization, load_idx, normalize_dataset, split_per_class, SplitSpec};
use distill_calib::distill::{distill_dc, DcConfig};
use distill_calib::nets::{NetSpec, TrainConfig};

fn main() -> distill_calib::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/digits");
    let all = load_idx(format!("{dir}/images-idx3-ubyte"), format!("{dir}/labels-idx1-ubyte"))?;
    let (test, train) = split_per_class(&all, &SplitSpec::per_class(0.4, 0))?;
    let train = normalize_dataset(&train)?;
    let test = apply_normalization(&test, train.normalization.as_ref().unwrap())?;
    let net = NetSpec::Mlp { input_dim: 64, hidden: vec![64], num_classes: 10 };
    let syn = distill_dc(&train, &net, &DcConfig { steps: 200, synthetic_lr: 0.5, ..DcConfig::default() }, 0)?
        .to_dataset()?;

    let t = svd_truncate_dataset(&syn, 0.2, SvdLayout::Dataset)?;
    println!("distilled set: {} rows, 20% truncation keeps labels: {}", t.len(), t.labels() == syn.labels());
    for (name, ds) in [("full", &train), ("distilled", &syn)] {
        let er = explained_ratio(ds.features())?;
        println!("{name:<10} top-10 explained ratio {:.3}", er[9.min(er.len() - 1)]);
    }
    let fr = [0.0, 0.1, 0.2];
    let full = svd_accuracy_sweep("full", &train, &test, &fr, SvdLayout::Dataset, &net, &TrainConfig { epochs: 30, ..TrainConfig::default() }, &[0, 1])?;
    let dd = svd_accuracy_sweep("distilled", &syn, &test, &fr, SvdLayout::Dataset, &net, &TrainConfig { epochs: 300, ..TrainConfig::default() }, &[0, 1])?;
    for r in [&full, &dd] {
        print!("{}", r.to_csv()?);
    }
    Ok(())
}
