//! Reverse-mode gradients against central differences, first and second
//! order, plus a gradient-matching meta-gradient by both routes.
//!
//!     cargo run --release --example gradient_check

use distill_calib::autodiff::{fd_grad, Tape};
use distill_calib::data::{gen_blobs, BlobSpec};
use distill_calib::distill::{dc_meta_grad, MaskSpec};
use distill_calib::autodiff::MetaRoute;
use distill_calib::nets::{init_params, NetSpec};
use distill_calib::seeds::{self, stream};
use distill_calib::tensor::relative_error;
use distill_calib::Tensor;

fn main() -> distill_calib::Result<()> {
    // f(x) = sum(log_softmax(x W)) on a 3x4 input
    let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64 * 0.11).cos()).collect())?;
    let f = |x: &Tensor| -> distill_calib::Result<f64> {
        let tape = Tape::new();
        let out = tape.constant(x.clone()).matmul(tape.constant(w.clone()))?.log_softmax_rows()?.sum()?;
        Ok(out.item())
    };
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = xv.matmul(tape.constant(w.clone()))?.log_softmax_rows()?.sum()?;
    let g = tape.grad(y, &[xv])?;
    let fd = fd_grad(|p| f(p), &x, 1e-5)?;
    println!("first order:  relative error {:.2e}", relative_error(g[0].value().data(), fd.data(), 1e-12));

    // d/dx of ||grad||^2, differentiating the recorded backward pass
    let gn = g[0].sq_norm()?;
    let gg = tape.grad(gn, &[xv])?;
    let h = |p: &Tensor| -> distill_calib::Result<f64> {
        let t = Tape::new();
        let v = t.leaf(p.clone());
        let y = v.matmul(t.constant(w.clone()))?.log_softmax_rows()?.sum()?;
        Ok(t.grad(y, &[v])?[0].value().sq_norm())
    };
    let fd2 = fd_grad(|p| h(p), &x, 1e-5)?;
    println!("second order: relative error {:.2e}", relative_error(gg[0].value().data(), fd2.data(), 1e-12));

    // gradient-matching loss, exact vs finite differences
    let spec = BlobSpec { classes: 3, dims: 6, spread: 1.0, center_scale: 2.0 };
    let real = gen_blobs(&spec, 4, 0)?;
    let syn = gen_blobs(&spec, 2, 1)?;
    let net = NetSpec::Mlp { input_dim: 6, hidden: vec![5], num_classes: 3 };
    let params = init_params(&net, 2)?;
    for mask in [None, Some(MaskSpec::fixed(0.3))] {
        let run = |route| {
            let mut rng = seeds::rng(3, stream::MASK);
            dc_meta_grad(&params, real.features(), real.labels(), syn.features(), syn.labels(), mask.as_ref(), &mut rng, route)
        };
        let exact = run(MetaRoute::Exact)?;
        let fd = run(MetaRoute::FiniteDifference { h: 1e-5 })?;
        println!(
            "dc meta-gradient (mask {:?}): loss {:.4}, relative error {:.2e}",
            mask.map(|m| m.ratio),
            exact.value,
            relative_error(exact.grad.data(), fd.grad.data(), 1e-10)
        );
    }
    Ok(())
}
