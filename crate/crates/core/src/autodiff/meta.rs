//! Gradients of objectives that themselves contain gradients.
//!
//! Two objective shapes are supported: a criterion evaluated on
//! `∇θ ℓ(θ; s)` at a fixed `θ` ([`GradientMatching`]), and a criterion
//! evaluated on the parameters reached after `N` explicit SGD steps on `s`
//! ([`SgdUnroll`]). Either way the result is `∂C/∂s`, obtained by
//! differentiating the recorded backward pass ([`MetaRoute::Exact`]) or by
//! central differences over the coordinates of `s`
//! ([`MetaRoute::FiniteDifference`]), which is always available as an oracle.

use super::check::fd_grad;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `ℓ(θ; s)` built on a tape.
pub type LossFn = dyn for<'t> Fn(&'t Tape, &[Var<'t>], Var<'t>) -> Result<Var<'t>>;
/// A scalar criterion of a parameter-shaped list (gradients or parameters).
pub type CriterionFn = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// A scalar objective of the synthetic tensor `s`.
pub trait MetaObjective {
    /// Records `C(s)` on `tape`, where `s` is already a var on that tape.
    fn build<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Var<'t>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetaRoute {
    /// Reverse mode through the recorded backward pass.
    Exact,
    /// Central differences over `s`.
    FiniteDifference { h: f64 },
}

#[derive(Debug, Clone)]
pub struct MetaGradient {
    /// `C(s)`.
    pub value: f64,
    /// `∂C/∂s`.
    pub grad: Tensor,
    /// Set when a ReLU input sits on (exact route) or crosses (FD route) its
    /// kink, so the derivative is only a one-sided estimate.
    pub kink_warning: bool,
}

/// `∂C/∂s` by the requested route.
pub fn meta_grad<O: MetaObjective + ?Sized>(
    objective: &O,
    s: &Tensor,
    route: MetaRoute,
) -> Result<MetaGradient> {
    match route {
        MetaRoute::Exact => {
            let tape = Tape::new();
            let sv = tape.leaf(s.clone());
            let c = objective.build(&tape, sv)?;
            let g = tape.grad(c, &[sv])?;
            let grad = (*g[0].value()).clone();
            Ok(MetaGradient {
                value: c.item(),
                grad,
                kink_warning: tape.min_relu_margin() == 0.0,
            })
        }
        MetaRoute::FiniteDifference { h } => {
            let (value, base_pattern) = evaluate_with_pattern(objective, s)?;
            let mut kink = false;
            let grad = fd_grad(
                |probe| {
                    let (v, pattern) = evaluate_with_pattern(objective, probe)?;
                    kink |= pattern != base_pattern;
                    Ok(v)
                },
                s,
                h,
            )?;
            Ok(MetaGradient {
                value,
                grad,
                kink_warning: kink,
            })
        }
    }
}

/// `C(s)` without taking the outer derivative.
pub fn meta_value<O: MetaObjective + ?Sized>(objective: &O, s: &Tensor) -> Result<f64> {
    evaluate_with_pattern(objective, s).map(|(v, _)| v)
}

fn evaluate_with_pattern<O: MetaObjective + ?Sized>(
    objective: &O,
    s: &Tensor,
) -> Result<(f64, Vec<bool>)> {
    let tape = Tape::new();
    // s must be tracked so inner gradients that flow through it are recorded
    let sv = tape.leaf(s.clone());
    let c = objective.build(&tape, sv)?;
    Ok((c.item(), tape.relu_pattern()))
}

/// `C(∇θ ℓ(θ; s))` at fixed `θ`.
pub struct GradientMatching {
    pub params: Vec<Tensor>,
    pub loss: Box<LossFn>,
    pub criterion: Box<CriterionFn>,
}

impl MetaObjective for GradientMatching {
    fn build<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Var<'t>> {
        let theta: Vec<Var<'t>> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let l = (self.loss)(tape, &theta, s)?;
        let g = tape.grad(l, &theta)?;
        (self.criterion)(tape, &g)
    }
}

/// `C(θ̂_N)` where `θ̂_{k+1} = θ̂_k − λ ∇θ ℓ(θ̂_k; s)` and `θ̂_0` is fixed.
pub struct SgdUnroll {
    pub start: Vec<Tensor>,
    pub steps: usize,
    pub lr: f64,
    pub loss: Box<LossFn>,
    pub criterion: Box<CriterionFn>,
}

impl SgdUnroll {
    /// Records the unrolled parameters `θ̂_N` on `tape`.
    pub fn unroll<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Vec<Var<'t>>> {
        unroll_sgd(tape, &self.start, self.steps, self.lr, s, &*self.loss)
    }
}

impl MetaObjective for SgdUnroll {
    fn build<'t>(&self, tape: &'t Tape, s: Var<'t>) -> Result<Var<'t>> {
        let theta = self.unroll(tape, s)?;
        (self.criterion)(tape, &theta)
    }
}

/// `N` differentiable SGD steps from `start` on the loss `ℓ(θ; s)`.
pub fn unroll_sgd<'t>(
    tape: &'t Tape,
    start: &[Tensor],
    steps: usize,
    lr: f64,
    s: Var<'t>,
    loss: &LossFn,
) -> Result<Vec<Var<'t>>> {
    if steps < 1 {
        return Err(Error::usage("an SGD unroll needs at least one step"));
    }
    let mut theta: Vec<Var<'t>> = start.iter().map(|p| tape.leaf(p.clone())).collect();
    for _ in 0..steps {
        let l = loss(tape, &theta, s)?;
        let g = tape.grad(l, &theta)?;
        theta = theta
            .iter()
            .zip(&g)
            .map(|(&t, &gi)| t.sub(gi.scale(lr)?))
            .collect::<Result<_>>()?;
    }
    Ok(theta)
}
