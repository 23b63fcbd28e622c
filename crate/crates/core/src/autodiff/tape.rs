//! Reverse-mode differentiation over an append-only node arena.
//!
//! Every backward rule is itself expressed with tape operations, so the
//! gradients returned by [`Tape::grad`] are ordinary [`Var`]s that can be
//! differentiated again. That is what makes gradient-of-gradient objectives
//! (gradient matching) and differentiation through SGD unrolls possible.
//!
//! Nodes are stored in creation order, which is a topological order; the
//! backward sweep walks ids downward from the output and visits each node
//! once.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvDims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    DivScalar(f64),
    Shift,
    Exp,
    Log,
    Powf(f64),
    SafeRecip,
    Sqrt,
    Relu,
    MatMul,
    Transpose,
    Reshape,
    SumReduce { outer: usize, mid: usize, inner: usize },
    Expand { outer: usize, mid: usize, inner: usize },
    Conv,
    ConvInputGrad,
    ConvWeightGrad,
    AvgPool2,
    AvgPool2Adjoint,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::DivScalar(_) => "div_scalar",
            Op::Shift => "shift",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Powf(_) => "powf",
            Op::SafeRecip => "recip",
            Op::Sqrt => "sqrt",
            Op::Relu => "relu",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::SumReduce { .. } => "sum",
            Op::Expand { .. } => "expand",
            Op::Conv => "conv3x3",
            Op::ConvInputGrad => "conv3x3_input_grad",
            Op::ConvWeightGrad => "conv3x3_weight_grad",
            Op::AvgPool2 => "avg_pool2",
            Op::AvgPool2Adjoint => "avg_pool2_adjoint",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    parents: Vec<usize>,
    tracked: bool,
}

/// A differentiation graph. Not `Sync`; use one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, Vec::new(), value, true)
    }

    /// A fixed input; gradients never flow into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Constant, Vec::new(), value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    fn push_unchecked(&self, op: Op, parents: Vec<usize>, value: Tensor, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            parents,
            tracked,
        });
        Var { tape: self, id }
    }

    fn push(&self, op: Op, parents: Vec<usize>, value: Tensor) -> Result<Var<'_>> {
        let id = self.len();
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op.name(),
                node: id,
            });
        }
        let tracked = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].tracked)
        };
        Ok(self.push_unchecked(op, parents, value, tracked))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned vars live on this tape and may be differentiated again.
    /// Leaves that `output` does not depend on receive zeros.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if output.value().len() != 1 {
            return Err(Error::usage(format!(
                "gradient of non-scalar output with shape {:?}",
                output.shape()
            )));
        }
        for w in wrt {
            if !self.tracked(w.id) {
                return Err(Error::usage(format!(
                    "gradient requested for untracked node {}",
                    w.id
                )));
            }
        }
        let n = output.id + 1;
        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        if self.tracked(output.id) {
            grads[output.id] = Some(self.constant(Tensor::ones(&output.shape())));
        }
        // nothing below the lowest requested node can contribute to it
        let lowest = wrt.iter().map(|w| w.id).min().unwrap_or(n);
        for id in ((lowest + 1).min(n)..n).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, parents) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].parents.clone())
            };
            if parents.is_empty() {
                continue;
            }
            for (slot, pid) in parents.iter().copied().enumerate() {
                if !self.tracked(pid) {
                    continue;
                }
                let contrib = self.vjp(id, &op, &parents, slot, g)?;
                grads[pid] = Some(match grads[pid] {
                    Some(prev) => prev.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                grads
                    .get(w.id)
                    .copied()
                    .flatten()
                    .unwrap_or_else(|| self.constant(Tensor::zeros(&w.shape())))
            })
            .collect())
    }

    /// Vector-Jacobian product of node `id` for its parent in `slot`.
    fn vjp<'t>(
        &'t self,
        id: usize,
        op: &Op,
        parents: &[usize],
        slot: usize,
        g: Var<'t>,
    ) -> Result<Var<'t>> {
        let p = |i: usize| self.var(parents[i]);
        let this = self.var(id);
        match *op {
            Op::Leaf | Op::Constant => unreachable!("leaves have no parents"),
            Op::Add | Op::Shift => Ok(g),
            Op::Sub => {
                if slot == 0 {
                    Ok(g)
                } else {
                    g.neg()
                }
            }
            Op::Mul => g.mul(p(1 - slot)),
            Op::Neg => g.neg(),
            Op::Scale(c) => g.scale(c),
            Op::DivScalar(c) => g.div_scalar(c),
            Op::Exp => g.mul(this),
            Op::Log => g.mul(p(0).safe_recip()?),
            Op::Powf(e) => {
                if e == 1.0 {
                    Ok(g)
                } else if e == 0.0 {
                    g.scale(0.0)
                } else {
                    g.mul(p(0).powf(e - 1.0)?.scale(e)?)
                }
            }
            Op::SafeRecip => g.mul(this.mul(this)?.neg()?),
            Op::Sqrt => g.mul(this.safe_recip()?.scale(0.5)?),
            Op::Relu => {
                let step = p(0).value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                g.mul(self.constant(step))
            }
            Op::MatMul => {
                if slot == 0 {
                    g.matmul(p(1).t()?)
                } else {
                    p(0).t()?.matmul(g)
                }
            }
            Op::Transpose => g.t(),
            Op::Reshape => g.reshape(&p(0).shape()),
            Op::SumReduce { outer, mid, inner } => g.expand(outer, mid, inner, &p(0).shape()),
            Op::Expand { outer, mid, inner } => {
                g.sum_reduce(outer, mid, inner)?.reshape(&p(0).shape())
            }
            Op::Conv => {
                if slot == 0 {
                    g.conv3x3_input_grad(p(1))
                } else {
                    p(0).conv3x3_weight_grad(g)
                }
            }
            Op::ConvInputGrad => {
                // z = convT(gy, w)
                if slot == 0 {
                    g.conv3x3(p(1))
                } else {
                    g.conv3x3_weight_grad(p(0))
                }
            }
            Op::ConvWeightGrad => {
                // W = convW(x, gy)
                if slot == 0 {
                    p(1).conv3x3_input_grad(g)
                } else {
                    p(0).conv3x3(g)
                }
            }
            Op::AvgPool2 => g.avg_pool2_adjoint(&p(0).shape()),
            Op::AvgPool2Adjoint => g.avg_pool2()?.reshape(&p(0).shape()),
        }
    }

    /// Sign pattern (`x > 0`) of every ReLU input recorded so far.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu))
            .flat_map(|n| nodes[n.parents[0]].value.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }

    /// Smallest `|x|` over all ReLU inputs, or `+∞` when there are none.
    pub fn min_relu_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu))
            .flat_map(|n| nodes[n.parents[0]].value.data().to_vec())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::dim(op, format!("expected 4-D tensor, got {:?}", t.shape()))),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a scalar var.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// A constant copy of this var's current value.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value().map(f);
        self.tape.push(op, vec![self.id], v)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(op.name(), &a, &b)?;
        let v = a.zip_map(&b, f)?;
        self.tape.push(op, vec![self.id, other.id], v)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(Op::Neg, |a| -a)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(c), |a| c * a)
    }

    /// Divides every element by a constant.
    pub fn div_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::DivScalar(c), |a| a / c)
    }

    /// Adds a scalar constant to every element.
    pub fn shift(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Shift, |a| a + c)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn powf(self, e: f64) -> Result<Var<'t>> {
        self.unary(Op::Powf(e), |a| a.powf(e))
    }

    /// `1/x`, with `0 ↦ 0`.
    pub fn safe_recip(self) -> Result<Var<'t>> {
        self.unary(Op::SafeRecip, |a| if a == 0.0 { 0.0 } else { 1.0 / a })
    }

    /// Square root; its derivative at 0 is taken to be 0.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu, |a| a.max(0.0))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (m, k, k2, n) = match (a.shape(), b.shape()) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (sa, sb) => {
                return Err(Error::dim(
                    "matmul",
                    format!("expected 2-D operands, got {:?} and {:?}", sa, sb),
                ))
            }
        };
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: [{m}×{k}]·[{k2}×{n}]"),
            ));
        }
        let v = Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))?;
        self.tape.push(Op::MatMul, vec![self.id, other.id], v)
    }

    /// Transpose of a 2-D var.
    pub fn t(self) -> Result<Var<'t>> {
        let a = self.value();
        let &[rows, cols] = a.shape() else {
            return Err(Error::dim("transpose", format!("expected 2-D, got {:?}", a.shape())));
        };
        let v = Tensor::new(vec![cols, rows], kernels::transpose(a.data(), rows, cols))?;
        self.tape.push(Op::Transpose, vec![self.id], v)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape() == shape {
            return Ok(self);
        }
        let v = a
            .reshape(shape)
            .map_err(|_| Error::dim("reshape", format!("{:?} -> {:?}", a.shape(), shape)))?;
        self.tape.push(Op::Reshape, vec![self.id], v)
    }

    /// Views the input as `[outer, mid, inner]` and sums out the outer and
    /// inner axes, giving a `[mid]` vector.
    pub fn sum_reduce(self, outer: usize, mid: usize, inner: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.len() != outer * mid * inner {
            return Err(Error::dim(
                "sum",
                format!("{:?} cannot be viewed as [{outer}, {mid}, {inner}]", a.shape()),
            ));
        }
        let d = a.data();
        let mut out = vec![0.0; mid];
        for o in 0..outer {
            for (m, acc) in out.iter_mut().enumerate() {
                let base = (o * mid + m) * inner;
                *acc += d[base..base + inner].iter().sum::<f64>();
            }
        }
        let v = Tensor::new(vec![mid], out)?;
        self.tape.push(Op::SumReduce { outer, mid, inner }, vec![self.id], v)
    }

    /// Broadcasts a `mid`-element input to `[outer, mid, inner]`, stored with
    /// the given `shape`.
    pub fn expand(self, outer: usize, mid: usize, inner: usize, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let total: usize = shape.iter().product();
        if a.len() != mid || total != outer * mid * inner {
            return Err(Error::dim(
                "expand",
                format!("{:?} -> [{outer}, {mid}, {inner}] as {:?}", a.shape(), shape),
            ));
        }
        let d = a.data();
        let mut out = Vec::with_capacity(total);
        for _ in 0..outer {
            for &x in d {
                out.extend(std::iter::repeat_n(x, inner));
            }
        }
        let v = Tensor::new(shape.to_vec(), out)?;
        self.tape.push(Op::Expand { outer, mid, inner }, vec![self.id], v)
    }

    /// 3×3 same-padded convolution of `self [B,Ci,H,W]` with `w [Co,Ci,3,3]`.
    pub fn conv3x3(self, w: Var<'t>) -> Result<Var<'t>> {
        let (x, wt) = (self.value(), w.value());
        let [batch, c_in, height, width] = dims4("conv3x3", &x)?;
        let [c_out, c_in2, k1, k2] = dims4("conv3x3", &wt)?;
        if c_in != c_in2 || k1 != 3 || k2 != 3 {
            return Err(Error::dim(
                "conv3x3",
                format!("input {:?} incompatible with kernel {:?}", x.shape(), wt.shape()),
            ));
        }
        let d = ConvDims {
            batch,
            c_in,
            c_out,
            height,
            width,
        };
        let v = Tensor::new(
            vec![batch, c_out, height, width],
            kernels::conv3x3(x.data(), wt.data(), d),
        )?;
        self.tape.push(Op::Conv, vec![self.id, w.id], v)
    }

    /// Adjoint of `conv3x3` in its input: `self [B,Co,H,W]`, `w [Co,Ci,3,3]`.
    pub fn conv3x3_input_grad(self, w: Var<'t>) -> Result<Var<'t>> {
        let (g, wt) = (self.value(), w.value());
        let [batch, c_out, height, width] = dims4("conv3x3_input_grad", &g)?;
        let [c_out2, c_in, _, _] = dims4("conv3x3_input_grad", &wt)?;
        if c_out != c_out2 {
            return Err(Error::dim("conv3x3_input_grad", "channel mismatch"));
        }
        let d = ConvDims {
            batch,
            c_in,
            c_out,
            height,
            width,
        };
        let v = Tensor::new(
            vec![batch, c_in, height, width],
            kernels::conv3x3_input_grad(g.data(), wt.data(), d),
        )?;
        self.tape.push(Op::ConvInputGrad, vec![self.id, w.id], v)
    }

    /// Adjoint of `conv3x3` in its kernel: `self [B,Ci,H,W]`, `g [B,Co,H,W]`.
    pub fn conv3x3_weight_grad(self, g: Var<'t>) -> Result<Var<'t>> {
        let (x, gv) = (self.value(), g.value());
        let [batch, c_in, height, width] = dims4("conv3x3_weight_grad", &x)?;
        let [b2, c_out, h2, w2] = dims4("conv3x3_weight_grad", &gv)?;
        if (batch, height, width) != (b2, h2, w2) {
            return Err(Error::dim("conv3x3_weight_grad", "spatial/batch mismatch"));
        }
        let d = ConvDims {
            batch,
            c_in,
            c_out,
            height,
            width,
        };
        let v = Tensor::new(
            vec![c_out, c_in, 3, 3],
            kernels::conv3x3_weight_grad(x.data(), gv.data(), d),
        )?;
        self.tape.push(Op::ConvWeightGrad, vec![self.id, g.id], v)
    }

    /// 2×2 stride-2 average pooling of a `[B,C,H,W]` var.
    pub fn avg_pool2(self) -> Result<Var<'t>> {
        let x = self.value();
        let [b, c, h, w] = dims4("avg_pool2", &x)?;
        if h < 2 || w < 2 {
            return Err(Error::dim("avg_pool2", "spatial extent below 2"));
        }
        let v = Tensor::new(
            vec![b, c, h / 2, w / 2],
            kernels::avg_pool2(x.data(), b * c, h, w),
        )?;
        self.tape.push(Op::AvgPool2, vec![self.id], v)
    }

    /// Adjoint of `avg_pool2`, producing a var of `shape = [B,C,H,W]`.
    pub fn avg_pool2_adjoint(self, shape: &[usize]) -> Result<Var<'t>> {
        let g = self.value();
        let &[b, c, h, w] = shape else {
            return Err(Error::dim("avg_pool2_adjoint", "target must be 4-D"));
        };
        if g.len() != b * c * (h / 2) * (w / 2) {
            return Err(Error::dim("avg_pool2_adjoint", "pooled extent mismatch"));
        }
        let v = Tensor::new(shape.to_vec(), kernels::avg_pool2_adjoint(g.data(), b * c, h, w))?;
        self.tape.push(Op::AvgPool2Adjoint, vec![self.id], v)
    }

    // ---- composites -------------------------------------------------------

    /// Sum of all elements, as a `[1]` var.
    pub fn sum(self) -> Result<Var<'t>> {
        let n = self.value().len();
        self.sum_reduce(1, 1, n)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sum of squares of all elements.
    pub fn sq_norm(self) -> Result<Var<'t>> {
        self.mul(self)?.sum()
    }

    /// Euclidean norm of all elements.
    pub fn norm(self) -> Result<Var<'t>> {
        self.sq_norm()?.sqrt()
    }

    /// Per-row sums of a `[B, K]` var, giving `[B]`.
    pub fn row_sums(self) -> Result<Var<'t>> {
        let [b, k] = self.dims2("row_sums")?;
        self.sum_reduce(1, b, k)
    }

    /// `x[b, k] + v[k]` for `x [B, K]`.
    pub fn add_row_vector(self, v: Var<'t>) -> Result<Var<'t>> {
        let [b, k] = self.dims2("add_row_vector")?;
        self.add(v.expand(b, k, 1, &[b, k])?)
    }

    /// `x[b, c, ..] + v[c]` for `x [B, C, H, W]`.
    pub fn add_channel_bias(self, v: Var<'t>) -> Result<Var<'t>> {
        let shape = self.shape();
        let [b, c, h, w] = dims4("add_channel_bias", &self.value())?;
        self.add(v.expand(b, c, h * w, &shape)?)
    }

    /// Per-sample, per-channel normalization over the spatial axes of a
    /// `[B, C, H, W]` var (no affine parameters).
    pub fn instance_norm(self, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let [b, c, h, w] = dims4("instance_norm", &self.value())?;
        let (planes, area) = (b * c, h * w);
        let inv_area = 1.0 / area as f64;
        let mean = self.sum_reduce(1, planes, area)?.scale(inv_area)?;
        let centered = self.sub(mean.expand(1, planes, area, &shape)?)?;
        let var = centered
            .mul(centered)?
            .sum_reduce(1, planes, area)?
            .scale(inv_area)?;
        let inv_std = var.shift(eps)?.powf(-0.5)?;
        centered.mul(inv_std.expand(1, planes, area, &shape)?)
    }

    /// Row-wise log-softmax of a `[B, K]` var.
    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let [b, k] = self.dims2("log_softmax")?;
        let x = self.value();
        let maxes: Vec<f64> = (0..b)
            .map(|i| x.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let m = self.tape.constant(Tensor::vector(maxes));
        let shifted = self.sub(m.expand(1, b, k, &[b, k])?)?;
        let lse = shifted.exp()?.row_sums()?.ln()?;
        shifted.sub(lse.expand(1, b, k, &[b, k])?)
    }

    fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match *self.value().shape() {
            [a, b] => Ok([a, b]),
            ref s => Err(Error::dim(op, format!("expected 2-D, got {:?}", s))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        let g = tape.grad(y, &[x]).unwrap();
        assert_eq!(g[0].item(), 6.0);
        // second derivative through the recorded backward pass
        let gg = tape.grad(g[0], &[x]).unwrap();
        assert_eq!(gg[0].item(), 2.0);
    }

    #[test]
    fn relu_sum_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let y = x.relu().unwrap().sum().unwrap();
        let g = tape.grad(y, &[x]).unwrap();
        assert_eq!(g[0].value().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let y = x.relu().unwrap().sum().unwrap();
        assert_eq!(tape.grad(y, &[x]).unwrap()[0].item(), 0.0);
    }

    #[test]
    fn untouched_leaf_gets_zeros() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(&[3]));
        let y = x.sum().unwrap();
        let g = tape.grad(y, &[unused]).unwrap();
        assert_eq!(g[0].value().data(), &[0.0; 3]);
    }

    #[test]
    fn constant_gradient_is_usage_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let y = x.mul(c).unwrap();
        assert!(matches!(tape.grad(y, &[c]), Err(Error::Usage(_))));
    }

    #[test]
    fn non_finite_reports_node() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let err = x.ln().unwrap_err();
        assert!(matches!(err, Error::Numeric { op: "log", node: 1 }));
    }

    #[test]
    fn shape_errors_name_primitive() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        match a.matmul(b) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
        match a.add(tape.leaf(Tensor::zeros(&[3]))) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "add"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_softmax_of_zeros() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let y = x.log_softmax_rows().unwrap().value();
        for &v in y.data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let n = x.norm().unwrap();
        assert_eq!(n.item(), 0.0);
        let g = tape.grad(n, &[x]).unwrap();
        assert_eq!(g[0].value().data(), &[0.0, 0.0]);
    }
}
