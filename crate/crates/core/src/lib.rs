//! Difference-in-differences detection of generator-produced samples.
//!
//! A sample is reconstructed twice through a generative model, `x' = R(x)`
//! and `x'' = R(x')`. The first-order residual `|x - x'|` and the
//! second-order residual `|x - x'| - |x' - x''|` feed two classifiers whose
//! decisions are fused with an AND gate. Reconstruction is modelled as
//! projection onto a synthetic manifold plus a correlated perturbation, or
//! realized by a toy DDIM with an exact mixture score.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod reconstruction;
pub mod residuals;
pub mod stats;

pub use error::{Error, Result};
