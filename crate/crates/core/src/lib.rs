//! Confidence calibration for networks trained on distilled data.
//!
//! The crate bundles a small reverse-mode autodiff engine, two dataset
//! distillation backbones (gradient matching and trajectory matching) with
//! masked variants, calibration methods including masked temperature
//! scaling, and diagnostic analyses (SVD truncation, logit concentration,
//! in/out-of-distribution confidence).
// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tape ops return `Result`, so they cannot be the std operator traits.
#![allow(clippy::should_implement_trait)]


pub mod analysis;
pub mod autodiff;
pub mod calib;
pub mod data;
pub mod distill;
pub mod error;
pub mod nets;
pub mod pipeline;
pub mod seeds;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
