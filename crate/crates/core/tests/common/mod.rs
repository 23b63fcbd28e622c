#![allow(dead_code)]

use distill_calib::autodiff::{fd_grad, Tape, Var};
use distill_calib::seeds::{self, Rng};
use distill_calib::tensor::relative_error;
use distill_calib::{Result, Tensor};
use rand::Rng as _;

#[derive(Clone, Copy)]
pub enum Domain {
    Any,
    /// Bounded away from zero (kinks and poles).
    AwayFromZero,
    Positive,
}

pub type Inputs = fn(&mut Rng) -> Vec<(Vec<usize>, Domain)>;

pub type Build = for<'t> fn(&[Var<'t>]) -> Result<Var<'t>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

fn small(rng: &mut Rng) -> usize {
    rng.gen_range(2..=4)
}

pub fn random_tensor(shape: &[usize], domain: Domain, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Any => rng.gen_range(-1.5..1.5),
            Domain::AwayFromZero => {
                let v: f64 = rng.gen_range(0.1..1.5);
                if rng.gen_bool(0.5) { v } else { -v }
            }
            Domain::Positive => rng.gen_range(0.3..2.0),
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

macro_rules! case {
    ($name:expr, |$r:ident| $inputs:expr, |$v:ident| $body:expr) => {
        Case {
            name: $name,
            inputs: |$r: &mut Rng| $inputs,
            build: |$v: &[Var<'_>]| $body,
        }
    };
}

/// Every differentiable tape primitive, with random shapes per instance.
pub fn primitive_cases() -> Vec<Case> {
    use Domain::*;
    vec![
        case!("add", |r| { let s = vec![small(r), small(r)]; vec![(s.clone(), Any), (s, Any)] }, |v| v[0].add(v[1])),
        case!("sub", |r| { let s = vec![small(r), small(r)]; vec![(s.clone(), Any), (s, Any)] }, |v| v[0].sub(v[1])),
        case!("mul", |r| { let s = vec![small(r), small(r)]; vec![(s.clone(), Any), (s, Any)] }, |v| v[0].mul(v[1])),
        case!("neg", |r| vec![(vec![small(r)], Any)], |v| v[0].neg()),
        case!("scale", |r| vec![(vec![small(r), 3], Any)], |v| v[0].scale(-1.7)),
        case!("div_scalar", |r| vec![(vec![small(r), 3], Any)], |v| v[0].div_scalar(0.3)),
        case!("shift", |r| vec![(vec![small(r)], Any)], |v| v[0].shift(2.5)),
        case!("exp", |r| vec![(vec![small(r), 2], Any)], |v| v[0].exp()),
        case!("ln", |r| vec![(vec![small(r), 2], Positive)], |v| v[0].ln()),
        case!("powf", |r| vec![(vec![small(r), 2], Positive)], |v| v[0].powf(-0.5)),
        case!("safe_recip", |r| vec![(vec![small(r), 2], AwayFromZero)], |v| v[0].safe_recip()),
        case!("sqrt", |r| vec![(vec![small(r), 2], Positive)], |v| v[0].sqrt()),
        case!("relu", |r| vec![(vec![small(r), 3], AwayFromZero)], |v| v[0].relu()),
        case!("matmul", |r| { let (a, b, c) = (small(r), small(r), small(r)); vec![(vec![a, b], Any), (vec![b, c], Any)] }, |v| v[0].matmul(v[1])),
        case!("transpose", |r| vec![(vec![small(r), small(r)], Any)], |v| v[0].t()),
        case!("reshape", |r| vec![(vec![2, small(r) * 2], Any)], |v| { let n = v[0].value().len(); v[0].reshape(&[n / 2, 2]) }),
        case!("sum_reduce", |r| vec![(vec![2, 3, small(r)], Any)], |v| { let n = v[0].value().len() / 6; v[0].sum_reduce(2, 3, n) }),
        case!("expand", |r| vec![(vec![small(r)], Any)], |v| { let m = v[0].value().len(); v[0].expand(2, m, 3, &[2 * m * 3]) }),
        case!("conv3x3", |r| { let (b, ci, co) = (small(r) - 1, small(r) - 1, small(r) - 1); vec![(vec![b, ci, 4, 3], Any), (vec![co, ci, 3, 3], Any)] }, |v| v[0].conv3x3(v[1])),
        case!("conv3x3_input_grad", |r| { let (b, ci, co) = (small(r) - 1, small(r) - 1, small(r) - 1); vec![(vec![b, co, 3, 4], Any), (vec![co, ci, 3, 3], Any)] }, |v| v[0].conv3x3_input_grad(v[1])),
        case!("conv3x3_weight_grad", |r| { let (b, ci, co) = (small(r) - 1, small(r) - 1, small(r) - 1); vec![(vec![b, ci, 3, 3], Any), (vec![b, co, 3, 3], Any)] }, |v| v[0].conv3x3_weight_grad(v[1])),
        case!("avg_pool2", |r| vec![(vec![small(r) - 1, 2, 4, 5], Any)], |v| v[0].avg_pool2()),
        case!("avg_pool2_adjoint", |r| vec![(vec![small(r) - 1, 2, 2, 2], Any)], |v| { let b = v[0].shape()[0]; v[0].avg_pool2_adjoint(&[b, 2, 4, 5]) }),
        case!("sum", |r| vec![(vec![small(r), 3], Any)], |v| v[0].sum()),
        case!("mean", |r| vec![(vec![small(r), 3], Any)], |v| v[0].mean()),
        case!("sq_norm", |r| vec![(vec![small(r), 3], Any)], |v| v[0].sq_norm()),
        case!("norm", |r| vec![(vec![small(r), 3], AwayFromZero)], |v| v[0].norm()),
        case!("row_sums", |r| vec![(vec![small(r), small(r)], Any)], |v| v[0].row_sums()),
        case!("add_row_vector", |r| { let k = small(r); vec![(vec![small(r), k], Any), (vec![k], Any)] }, |v| v[0].add_row_vector(v[1])),
        case!("add_channel_bias", |r| { let c = small(r); vec![(vec![2, c, 2, 3], Any), (vec![c], Any)] }, |v| v[0].add_channel_bias(v[1])),
        case!("instance_norm", |r| vec![(vec![small(r) - 1, 2, 3, 3], Any)], |v| v[0].instance_norm(1e-5)),
        case!("log_softmax_rows", |r| vec![(vec![small(r), small(r)], Any)], |v| v[0].log_softmax_rows()),
    ]
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of `⟨w, op(inputs)⟩` over all inputs, for instance `seed`.
pub fn primitive_error(case: &Case, seed: u64) -> f64 {
    let mut rng = seeds::rng(seed, 100);
    let specs = (case.inputs)(&mut rng);
    let xs: Vec<Tensor> = specs.iter().map(|(s, d)| random_tensor(s, *d, &mut rng)).collect();
    let out_shape = {
        let tape = Tape::new();
        let v: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        (case.build)(&v).unwrap().shape()
    };
    let w = random_tensor(&out_shape, Domain::Any, &mut rng);
    let scalar = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let v: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok((case.build)(&v)?.mul(tape.constant(w.clone()))?.sum()?.item())
    };
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = (case.build)(&leaves).unwrap().mul(tape.constant(w.clone())).unwrap().sum().unwrap();
    let grads = tape.grad(y, &leaves).unwrap();
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let fd = fd_grad(
            |p| {
                let mut probe = xs.clone();
                probe[i] = p.clone();
                scalar(&probe)
            },
            &xs[i],
            1e-6,
        )
        .unwrap();
        worst = worst.max(relative_error(g.value().data(), fd.data(), 1e-8));
    }
    worst
}

/// Second-order check: gradient of `‖∂f/∂x₀‖²` with
/// `f = ⟨w, op⟩ + ½‖op‖²` against finite differences of the first-order
/// tape gradient. The quadratic term keeps the check nontrivial for
/// primitives that are linear in `x₀`.
pub fn second_order_error(case: &Case, seed: u64) -> f64 {
    let mut rng = seeds::rng(seed, 101);
    let specs = (case.inputs)(&mut rng);
    let xs: Vec<Tensor> = specs.iter().map(|(s, d)| random_tensor(s, *d, &mut rng)).collect();
    let out_shape = {
        let tape = Tape::new();
        let v: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        (case.build)(&v).unwrap().shape()
    };
    let w = random_tensor(&out_shape, Domain::Any, &mut rng);
    let objective = |tape: &Tape, v: &[Var<'_>]| -> Result<f64> {
        let op = (case.build)(v)?;
        let f = op.mul(tape.constant(w.clone()))?.sum()?.add(op.sq_norm()?.scale(0.5)?)?;
        Ok(tape.grad(f, &[v[0]])?[0].sq_norm()?.item())
    };
    let value = |x0: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let mut v: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        v[0] = tape.leaf(x0.clone());
        objective(&tape, &v)
    };
    let tape = Tape::new();
    let mut v: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    v[0] = tape.leaf(xs[0].clone());
    let op = (case.build)(&v).unwrap();
    let f = op
        .mul(tape.constant(w.clone()))
        .and_then(|p| p.sum())
        .and_then(|p| p.add(op.sq_norm()?.scale(0.5)?))
        .unwrap();
    let g = tape.grad(f, &[v[0]]).unwrap()[0];
    let gg = tape.grad(g.sq_norm().unwrap(), &[v[0]]).unwrap();
    let fd = fd_grad(value, &xs[0], 1e-5).unwrap();
    relative_error(gg[0].value().data(), fd.data(), 1e-8)
}

/// Brute-force ECE: every sample is compared against every bin's bounds.
pub fn ece_oracle(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for m in 0..bins {
        let lo = m as f64 / bins as f64;
        let hi = (m + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..n)
            .filter(|&i| if m == 0 { conf[i] >= 0.0 && conf[i] <= hi } else { conf[i] > lo && conf[i] <= hi })
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / k;
        let mc = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
        total += k / n as f64 * (mc - acc).abs();
    }
    total
}

pub fn tiny_blobs_config(seeds: &[u64]) -> String {
    format!(
        r#"
        name = "tiny"
        seeds = {seeds:?}
        [dataset]
        kind = "blobs"
        classes = 3
        dims = 6
        center_scale = 1.5
        train_per_class = 30
        test_per_class = 30
        [net]
        arch = "mlp"
        input_dim = 6
        hidden = [8]
        num_classes = 3
        [distill]
        ipc = 4
        [distill.dc]
        steps = 10
        synthetic_lr = 0.2
        [train.ddnn]
        epochs = 20
        [train.fdnn]
        epochs = 5
    "#
    )
}
