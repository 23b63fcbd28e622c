//! Small classifiers: an MLP and a reduced ConvNet
//! (conv3×3 → instance norm → ReLU → 2×2 average pool, per block).

mod train;

pub use train::{evaluate, loss_ce, sgd_train, sgd_train_observed, EpochMetrics, EvalResult, TrainConfig, TrainLoss, Trained};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::program::INSTANCE_NORM_EPS;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::seeds::{self, stream};
use crate::store::NamedTensors;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum NetSpec {
    /// Fully connected layers with ReLU between them; `hidden` may be empty
    /// (a single linear layer).
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        num_classes: usize,
    },
    /// `blocks` conv blocks of `channels` filters, then a linear classifier.
    ConvNet {
        in_channels: usize,
        height: usize,
        width: usize,
        blocks: usize,
        channels: usize,
        num_classes: usize,
    },
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => {
                if *input_dim == 0 || *num_classes == 0 || hidden.contains(&0) {
                    return Err(Error::usage("MLP extents must be positive"));
                }
            }
            NetSpec::ConvNet {
                in_channels,
                height,
                width,
                blocks,
                channels,
                num_classes,
            } => {
                if *blocks == 0 {
                    return Err(Error::usage("ConvNet needs at least one block"));
                }
                if *in_channels == 0 || *channels == 0 || *num_classes == 0 {
                    return Err(Error::usage("ConvNet extents must be positive"));
                }
                if (height >> blocks) == 0 || (width >> blocks) == 0 {
                    return Err(Error::usage(format!(
                        "{height}×{width} input is too small for {blocks} pooling blocks"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetSpec::Mlp { input_dim, .. } => *input_dim,
            NetSpec::ConvNet {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            NetSpec::Mlp { num_classes, .. } | NetSpec::ConvNet { num_classes, .. } => *num_classes,
        }
    }

    /// Number of feature layers (hidden layers or conv blocks).
    pub fn depth(&self) -> usize {
        match self {
            NetSpec::Mlp { hidden, .. } => hidden.len(),
            NetSpec::ConvNet { blocks, .. } => *blocks,
        }
    }

    /// `(name, shape, fan_in)` of every parameter, in storage order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        match self {
            NetSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => {
                let mut widths = vec![*input_dim];
                widths.extend(hidden);
                widths.push(*num_classes);
                for (i, w) in widths.windows(2).enumerate() {
                    out.push((format!("fc{i}.weight"), vec![w[0], w[1]], w[0]));
                    out.push((format!("fc{i}.bias"), vec![w[1]], w[0]));
                }
            }
            NetSpec::ConvNet {
                in_channels,
                height,
                width,
                blocks,
                channels,
                num_classes,
            } => {
                let mut c_in = *in_channels;
                for b in 0..*blocks {
                    out.push((format!("conv{b}.weight"), vec![*channels, c_in, 3, 3], c_in * 9));
                    out.push((format!("conv{b}.bias"), vec![*channels], c_in * 9));
                    c_in = *channels;
                }
                let flat = channels * (height >> blocks) * (width >> blocks);
                out.push(("classifier.weight".into(), vec![flat, *num_classes], flat));
                out.push(("classifier.bias".into(), vec![*num_classes], flat));
            }
        }
        out
    }
}

/// Network parameters `θ` in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub spec: NetSpec,
    pub tensors: Vec<(String, Tensor)>,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamsMeta {
    kind: String,
    spec: NetSpec,
    seed: u64,
    steps: usize,
}

/// Uniform He-style initialization: weights in `±√3·√(2/fan_in)`, biases 0.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<Params> {
    spec.validate()?;
    let mut rng = seeds::rng(seed, stream::INIT);
    let tensors = spec
        .layout()
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let bound = 3f64.sqrt() * (2.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
                    .expect("layout shapes are consistent")
            };
            (name, t)
        })
        .collect();
    Ok(Params {
        spec: spec.clone(),
        tensors,
        seed,
        steps: 0,
    })
}

impl Params {
    pub fn values(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Same names and spec with new values.
    pub fn with_values(&self, values: Vec<Tensor>) -> Result<Params> {
        if values.len() != self.tensors.len() {
            return Err(Error::dim("params", "parameter count changed"));
        }
        let tensors = self
            .tensors
            .iter()
            .zip(values)
            .map(|((n, old), new)| {
                if old.shape() != new.shape() {
                    Err(Error::dim("params", format!("{n} changed shape")))
                } else {
                    Ok((n.clone(), new))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Params {
            tensors,
            ..self.clone()
        })
    }

    /// Parameters flattened into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn to_named(&self) -> Result<NamedTensors> {
        NamedTensors::new(
            &ParamsMeta {
                kind: "params".into(),
                spec: self.spec.clone(),
                seed: self.seed,
                steps: self.steps,
            },
            self.tensors.clone(),
        )
    }

    pub fn from_named(file: &NamedTensors) -> Result<Params> {
        let meta: ParamsMeta = file.metadata_as()?;
        let expected = meta.spec.layout();
        if expected.len() != file.tensors.len()
            || expected
                .iter()
                .zip(&file.tensors)
                .any(|((n, s, _), (fn_, t))| n != fn_ || s.as_slice() != t.shape())
        {
            return Err(Error::Format {
                offset: 0,
                detail: "tensor layout does not match the stored spec".into(),
            });
        }
        Ok(Params {
            spec: meta.spec,
            tensors: file.tensors.clone(),
            seed: meta.seed,
            steps: meta.steps,
        })
    }
}

/// Records the forward pass; returns per-layer features and the logits.
pub fn forward_with_features<'t>(
    spec: &NetSpec,
    params: &[Var<'t>],
    x: Var<'t>,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != spec.input_dim() {
        return Err(Error::dim(
            "forward",
            format!("batch {:?} does not match input dim {}", shape, spec.input_dim()),
        ));
    }
    let batch = shape[0];
    let mut feats = Vec::with_capacity(spec.depth());
    match spec {
        NetSpec::Mlp { hidden, .. } => {
            let mut h = x;
            for i in 0..hidden.len() {
                h = h.matmul(params[2 * i])?.add_row_vector(params[2 * i + 1])?.relu()?;
                feats.push(h);
            }
            let j = hidden.len();
            let logits = h.matmul(params[2 * j])?.add_row_vector(params[2 * j + 1])?;
            Ok((feats, logits))
        }
        NetSpec::ConvNet {
            in_channels,
            height,
            width,
            blocks,
            ..
        } => {
            let mut h = x.reshape(&[batch, *in_channels, *height, *width])?;
            for b in 0..*blocks {
                h = h
                    .conv3x3(params[2 * b])?
                    .add_channel_bias(params[2 * b + 1])?
                    .instance_norm(INSTANCE_NORM_EPS)?
                    .relu()?
                    .avg_pool2()?;
                feats.push(h);
            }
            let flat: usize = h.shape()[1..].iter().product();
            let h = h.reshape(&[batch, flat])?;
            let logits = h
                .matmul(params[2 * blocks])?
                .add_row_vector(params[2 * blocks + 1])?;
            Ok((feats, logits))
        }
    }
}

pub fn forward<'t>(spec: &NetSpec, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
    forward_with_features(spec, params, x).map(|(_, z)| z)
}

/// Raw logits `[B × K]` for a batch of flattened examples.
pub fn forward_logits(params: &Params, batch: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let p: Vec<_> = params.tensors.iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let z = forward(&params.spec, &p, tape.constant(batch.clone()))?;
    Ok((*z.value()).clone())
}

/// Post-activation output of every hidden layer / conv block, each
/// flattened to `[B × features]`.
pub fn layer_features(params: &Params, batch: &Tensor) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let p: Vec<_> = params.tensors.iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let (feats, _) = forward_with_features(&params.spec, &p, tape.constant(batch.clone()))?;
    feats
        .into_iter()
        .map(|f| {
            let v = f.value();
            let rows = v.shape()[0];
            v.reshape(&[rows, v.len() / rows])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(hidden: Vec<usize>) -> NetSpec {
        NetSpec::Mlp {
            input_dim: 4,
            hidden,
            num_classes: 3,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = NetSpec::Mlp {
            input_dim: 2,
            hidden: vec![5],
            num_classes: 2,
        };
        let a = init_params(&spec, 9).unwrap();
        assert_eq!(a, init_params(&spec, 9).unwrap());
        let bound = (2.0f64 / 2.0).sqrt() * 3f64.sqrt();
        assert!(a.get("fc0.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("fc0.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_block_convnet_is_rejected() {
        let spec = NetSpec::ConvNet {
            in_channels: 1,
            height: 8,
            width: 8,
            blocks: 0,
            channels: 4,
            num_classes: 2,
        };
        assert!(matches!(init_params(&spec, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let p = init_params(&mlp(vec![6]), 1).unwrap();
        let zeros = p.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let p = p.with_values(zeros).unwrap();
        let z = forward_logits(&p, &Tensor::full(&[3, 4], 0.7)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_copies_input() {
        let spec = NetSpec::Mlp {
            input_dim: 3,
            hidden: vec![],
            num_classes: 3,
        };
        let p = init_params(&spec, 0).unwrap();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let p = p.with_values(vec![eye.clone(), Tensor::zeros(&[3])]).unwrap();
        assert_eq!(forward_logits(&p, &eye).unwrap(), eye);
    }

    #[test]
    fn feature_list_matches_depth() {
        let p = init_params(&mlp(vec![5, 7]), 2).unwrap();
        let x = Tensor::zeros(&[2, 4]);
        let f = layer_features(&p, &x).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].shape(), &[2, 7]);
        // zero input: first layer output is relu(bias) = 0 at init
        assert!(f[0].data().iter().all(|&v| v == 0.0));

        let conv = NetSpec::ConvNet {
            in_channels: 1,
            height: 8,
            width: 8,
            blocks: 2,
            channels: 3,
            num_classes: 2,
        };
        let p = init_params(&conv, 2).unwrap();
        let f = layer_features(&p, &Tensor::full(&[2, 64], 0.1)).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].shape(), &[2, 3 * 2 * 2]);
        assert_eq!(p.get("classifier.weight").unwrap().shape()[0], 12);
    }

    #[test]
    fn batch_dimension_mismatch() {
        let p = init_params(&mlp(vec![]), 0).unwrap();
        assert!(matches!(
            forward_logits(&p, &Tensor::zeros(&[2, 5])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn named_file_roundtrip() {
        let p = init_params(&mlp(vec![3]), 4).unwrap();
        let f = p.to_named().unwrap();
        let back = Params::from_named(&NamedTensors::decode(&f.encode()).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
