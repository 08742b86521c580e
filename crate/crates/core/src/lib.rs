//! Gradient-leakage laboratory.
//!
//! Implements optimization-based input reconstruction from shared gradients,
//! the noise defenses it targets expressed as explicit conditional densities
//! `p(g|x)`, closed-form inversion of fully-connected first layers, and an
//! evaluation harness (adversarial risk, PSNR matrices, ablations).
//!
//! The numeric core is generic over the scalar type; the `f64` aliases at the
//! crate root are what every experiment and the CLI use.

pub mod analytic;
pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod defenses;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod models;
pub mod num;
pub mod priors;
pub mod tensor;

pub use error::{Error, Result};
pub use num::Real;

/// Default 64-bit tensor used throughout the attack pipeline.
pub type Tensor = tensor::Tensor<f64>;
/// Default 64-bit differentiation trace.
pub type Graph = autodiff::Graph<f64>;
pub use autodiff::Var;
