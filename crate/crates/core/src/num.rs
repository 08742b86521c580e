//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`]; the crate root
//! exposes `f64` aliases, which is what the attack pipeline and all reported
//! results use. `f32` is supported for experimentation but the noise scales
//! used by the defenses (around 0.1) drift visibly in single precision.

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the tensor engine is generic over.
pub trait Real:
    Float + NumAssignOps + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Conversion from `f64`, used for literals and RNG draws.
    fn of(v: f64) -> Self;

    /// Widening (or identity) conversion back to `f64` for reporting.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> f32 {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> f64 {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
