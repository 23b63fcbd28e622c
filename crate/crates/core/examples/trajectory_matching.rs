//! Expert trajectories on the digits fixture, then trajectory-matching
//! distillation with and without input masking.
//!
//!     cargo run --release --example trajectory_matching

use distill_calib::data::{apply_normalization, load_idx, normalize_dataset, split_per_class, SplitSpec};
use distill_calib::distill::{distill_mtt, record_trajectory, MaskSpec, MttConfig};
use distill_calib::nets::{evaluate, init_params, sgd_train, NetSpec, TrainConfig};

fn main() -> distill_calib::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/digits");
    let all = load_idx(format!("{dir}/images-idx3-ubyte"), format!("{dir}/labels-idx1-ubyte"))?;
    let (test, train) = split_per_class(&all, &SplitSpec::per_class(0.4, 0))?;
    let train = normalize_dataset(&train)?;
    let test = apply_normalization(&test, train.normalization.as_ref().unwrap())?;
    let net = NetSpec::Mlp { input_dim: 64, hidden: vec![64], num_classes: 10 };

    let expert_cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let experts = (0..2)
        .map(|e| record_trajectory(&net, &train, &expert_cfg, 10, 100 + e))
        .collect::<distill_calib::Result<Vec<_>>>()?;
    println!("{} experts, {} snapshots each", experts.len(), experts[0].snapshots.len());

    let tc = TrainConfig { epochs: 300, ..TrainConfig::default() };
    for mask in [None, Some(MaskSpec::fixed(0.1))] {
        let cfg = MttConfig {
            steps: 300,
            student_steps: 2,
            expert_span: 2,
            synthetic_lr: 100.0,
            mask,
            ..MttConfig::default()
        };
        let syn = distill_mtt(&train, &experts, &cfg, 0)?;
        let ddnn = sgd_train(&init_params(&net, 0)?, &syn.to_dataset()?, &tc, 0)?;
        println!(
            "mask {:?}: accuracy {:.3}",
            mask.map(|m| m.ratio),
            evaluate(&ddnn.params, &test)?.accuracy
        );
    }
    Ok(())
}
