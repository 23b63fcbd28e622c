//! Declarative op traces evaluated onto a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Instance-norm epsilon added to the variance.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    MatMul,
    Add,
    Mul,
    Relu,
    AvgPool2,
    Conv3x3,
    InstanceNorm,
    LogSoftmax,
    Sum,
    Mean,
}

impl Primitive {
    fn arity(self) -> usize {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Mul | Primitive::Conv3x3 => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    /// A named input tensor.
    Input(String),
    /// The result of an earlier instruction.
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub primitive: Primitive,
    pub args: Vec<Operand>,
}

impl Instruction {
    pub fn new(primitive: Primitive, args: Vec<Operand>) -> Self {
        Instruction { primitive, args }
    }
}

/// A straight-line program; its value is the last instruction's result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub instructions: Vec<Instruction>,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an instruction and returns an operand referring to it.
    pub fn push(&mut self, primitive: Primitive, args: Vec<Operand>) -> Operand {
        self.instructions.push(Instruction::new(primitive, args));
        Operand::Step(self.instructions.len() - 1)
    }
}

/// The tape of a tracked evaluation, with its output and named leaves.
pub struct GradRecord {
    tape: Tape,
    output: usize,
    inputs: BTreeMap<String, usize>,
}

impl GradRecord {
    pub fn output_shape(&self) -> Vec<usize> {
        self.tape.var(self.output).shape()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.tape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tape.is_empty()
    }
}

pub struct Evaluation {
    pub value: Tensor,
    pub record: Option<GradRecord>,
}

/// Evaluates `program` on `inputs`. With `track`, every input is a
/// differentiable leaf and the tape is returned for [`grad`].
pub fn eval_graph(
    inputs: &BTreeMap<String, Tensor>,
    program: &Program,
    track: bool,
) -> Result<Evaluation> {
    if program.instructions.is_empty() {
        return Err(Error::usage("empty program"));
    }
    let tape = Tape::new();
    let mut leaves = BTreeMap::new();
    for (name, t) in inputs {
        let v = if track {
            tape.leaf(t.clone())
        } else {
            tape.constant(t.clone())
        };
        leaves.insert(name.clone(), v.id());
    }
    let mut steps: Vec<Var<'_>> = Vec::with_capacity(program.instructions.len());
    for (i, ins) in program.instructions.iter().enumerate() {
        if ins.args.len() != ins.primitive.arity() {
            return Err(Error::usage(format!(
                "instruction {i}: {:?} takes {} operands, got {}",
                ins.primitive,
                ins.primitive.arity(),
                ins.args.len()
            )));
        }
        let args = ins
            .args
            .iter()
            .map(|a| match a {
                Operand::Input(name) => leaves
                    .get(name)
                    .map(|&id| tape.var(id))
                    .ok_or_else(|| Error::usage(format!("unknown input `{name}`"))),
                Operand::Step(j) if *j < i => Ok(steps[*j]),
                Operand::Step(j) => Err(Error::usage(format!(
                    "instruction {i} refers to later step {j}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let out = apply(ins.primitive, &args)?;
        steps.push(out);
    }
    let out = *steps.last().expect("nonempty program");
    let value = (*out.value()).clone();
    let output = out.id();
    drop(steps);
    Ok(Evaluation {
        value,
        record: track.then_some(GradRecord {
            tape,
            output,
            inputs: leaves,
        }),
    })
}

fn apply<'t>(p: Primitive, a: &[Var<'t>]) -> Result<Var<'t>> {
    match p {
        Primitive::MatMul => a[0].matmul(a[1]),
        Primitive::Add => a[0].add(a[1]),
        Primitive::Mul => a[0].mul(a[1]),
        Primitive::Relu => a[0].relu(),
        Primitive::AvgPool2 => a[0].avg_pool2(),
        Primitive::Conv3x3 => a[0].conv3x3(a[1]),
        Primitive::InstanceNorm => a[0].instance_norm(INSTANCE_NORM_EPS),
        Primitive::LogSoftmax => a[0].log_softmax_rows(),
        Primitive::Sum => a[0].sum(),
        Primitive::Mean => a[0].mean(),
    }
}

/// Exact gradients of a scalar-valued tracked evaluation.
pub fn grad(record: &GradRecord, wrt: &[&str]) -> Result<BTreeMap<String, Tensor>> {
    let tape = &record.tape;
    let leaves = wrt
        .iter()
        .map(|name| {
            record
                .inputs
                .get(*name)
                .map(|&id| tape.var(id))
                .ok_or_else(|| Error::usage(format!("`{name}` is not a tracked leaf")))
        })
        .collect::<Result<Vec<_>>>()?;
    let grads = tape.grad(tape.var(record.output), &leaves)?;
    Ok(wrt
        .iter()
        .zip(grads)
        .map(|(n, g)| (n.to_string(), (*g.value()).clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn matmul_identity_case() {
        let mut p = Program::new();
        p.push(
            Primitive::MatMul,
            vec![Operand::Input("a".into()), Operand::Input("i".into())],
        );
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = eval_graph(&inputs(&[("a", a.clone()), ("i", i)]), &p, false).unwrap();
        assert_eq!(out.value, a);
        assert!(out.record.is_none());
    }

    #[test]
    fn relu_and_log_softmax() {
        let mut p = Program::new();
        p.push(Primitive::Relu, vec![Operand::Input("x".into())]);
        let out = eval_graph(&inputs(&[("x", Tensor::vector(vec![-1.0, 0.0, 2.0]))]), &p, false)
            .unwrap();
        assert_eq!(out.value.data(), &[0.0, 0.0, 2.0]);

        let mut p = Program::new();
        p.push(Primitive::LogSoftmax, vec![Operand::Input("z".into())]);
        let out = eval_graph(&inputs(&[("z", Tensor::zeros(&[1, 2]))]), &p, false).unwrap();
        for v in out.value.data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn tracked_gradient_and_errors() {
        let mut p = Program::new();
        let r = p.push(Primitive::Relu, vec![Operand::Input("x".into())]);
        p.push(Primitive::Sum, vec![r]);
        let ev = eval_graph(&inputs(&[("x", Tensor::vector(vec![-1.0, 2.0]))]), &p, true).unwrap();
        let rec = ev.record.unwrap();
        let g = grad(&rec, &["x"]).unwrap();
        assert_eq!(g["x"].data(), &[0.0, 1.0]);
        assert!(matches!(grad(&rec, &["y"]), Err(Error::Usage(_))));
    }

    #[test]
    fn malformed_programs() {
        let x = inputs(&[("x", Tensor::zeros(&[2, 3]))]);
        assert!(eval_graph(&x, &Program::new(), false).is_err());
        let mut p = Program::new();
        p.push(Primitive::MatMul, vec![Operand::Input("x".into())]);
        assert!(matches!(eval_graph(&x, &p, false), Err(Error::Usage(_))));
        let mut p = Program::new();
        p.push(
            Primitive::MatMul,
            vec![Operand::Input("x".into()), Operand::Input("x".into())],
        );
        assert!(matches!(
            eval_graph(&x, &p, false),
            Err(Error::Dimension { op: "matmul", .. })
        ));
    }
}
