//! Tensor arithmetic with reverse-mode differentiation, a finite-difference
//! oracle, and gradients through gradients.

pub mod check;
pub mod kernels;
pub mod meta;
pub mod program;
pub mod tape;

pub use check::fd_grad;
pub use meta::{meta_grad, meta_value, GradientMatching, MetaGradient, MetaObjective, MetaRoute, SgdUnroll};
pub use program::{eval_graph, grad, Evaluation, GradRecord, Instruction, Operand, Primitive, Program};
pub use tape::{Tape, Var};
