//! Reading and writing the supported file formats: IDX, CIFAR-10 binary
//! batches and named-tensor files.
//!
//!     cargo run --release --example data_formats

use distill_calib::data::{parse_cifar10_bin, parse_idx, write_cifar10_bin, write_idx_images, write_idx_labels};
use distill_calib::nets::{init_params, NetSpec, Params};
use distill_calib::store::NamedTensors;

fn main() -> distill_calib::Result<()> {
    let pixels: Vec<u8> = (0..3 * 4 * 4).map(|i| (i * 5) as u8).collect();
    let idx = parse_idx(&write_idx_images(3, 4, 4, &pixels), &write_idx_labels(&[0, 1, 1]))?;
    println!("idx: {} images of {:?}, classes {:?}", idx.len(), idx.image_shape, idx.class_counts());

    let records: Vec<(u8, Vec<u8>)> = (0..4).map(|c| (c as u8, vec![c as u8 * 60; 3072])).collect();
    let cifar = parse_cifar10_bin(&write_cifar10_bin(&records)?)?;
    println!("cifar: {} images, dim {}", cifar.len(), cifar.dim());

    let net = NetSpec::ConvNet { in_channels: 3, height: 32, width: 32, blocks: 2, channels: 8, num_classes: 10 };
    let params = init_params(&net, 7)?;
    let bytes = params.to_named()?.encode();
    let back = Params::from_named(&NamedTensors::decode(&bytes)?)?;
    println!("convnet params: {} tensors, {} bytes encoded, round trip exact: {}", back.tensors.len(), bytes.len(), back == params);
    Ok(())
}
