//! Input priors `log p(x)` up to additive constants, traceable in `x`.
//!
//! Every prior is non-positive with 0 as its best value (uniform is
//! identically 0), so the attack uniformly *maximizes*
//! `log p(g|x) + beta * log p(x)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::num::Real;

/// Tagged description of `log p(x)`.
///
/// The total-variation priors interpret `x` as a row-major `(h, w)` image
/// with forward differences and no wraparound: boundary pixels contribute
/// only their existing neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Uniform,
    /// `-0.5 * ||x||^2`
    GaussianUnit,
    /// `-||x||_1`
    LaplacianUnit,
    /// Anisotropic total variation, unnormalized.
    TvAniso {
        image_shape: (usize, usize),
    },
    /// `-||x - clip(x, 0, 1)||_2`
    PixelRange,
    /// `-(phi * TV + (1 - phi) * pixel_range)`
    TvPlusRange {
        image_shape: (usize, usize),
        phi: f64,
    },
}

impl PriorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PriorSpec::Uniform => "uniform",
            PriorSpec::GaussianUnit => "gaussian_unit",
            PriorSpec::LaplacianUnit => "laplacian_unit",
            PriorSpec::TvAniso { .. } => "tv_aniso",
            PriorSpec::PixelRange => "pixel_range",
            PriorSpec::TvPlusRange { .. } => "tv_plus_range",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::TvAniso { image_shape } | PriorSpec::TvPlusRange { image_shape, .. } => {
                if image_shape.0 == 0 || image_shape.1 == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "degenerate image shape {image_shape:?}"
                    )));
                }
                if let PriorSpec::TvPlusRange { phi, .. } = *self {
                    if !(0.0..=1.0).contains(&phi) {
                        return Err(Error::InvalidConfig(format!(
                            "phi must be in [0,1], got {phi}"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Traced `log p(x)` for a flat input var.
pub fn log_prior<T: Real>(g: &mut Graph<T>, prior: &PriorSpec, x: Var) -> Result<Var> {
    prior.validate()?;
    match *prior {
        PriorSpec::Uniform => Ok(g.scalar(T::zero())),
        PriorSpec::GaussianUnit => {
            let s = g.sum_sq(x)?;
            g.scale(s, T::of(-0.5))
        }
        PriorSpec::LaplacianUnit => {
            let s = g.sum_abs(x)?;
            g.neg(s)
        }
        PriorSpec::TvAniso { image_shape } => {
            let tv = tv_aniso(g, x, image_shape)?;
            g.neg(tv)
        }
        PriorSpec::PixelRange => {
            let e = range_error(g, x)?;
            g.neg(e)
        }
        PriorSpec::TvPlusRange { image_shape, phi } => {
            let tv = tv_aniso(g, x, image_shape)?;
            let range = range_error(g, x)?;
            let a = g.scale(tv, T::of(phi))?;
            let b = g.scale(range, T::of(1.0 - phi))?;
            let s = g.add(a, b)?;
            g.neg(s)
        }
    }
}

/// `sum |x[i+1,j] - x[i,j]| + sum |x[i,j+1] - x[i,j]|` over a row-major
/// `(h, w)` image stored flat.
fn tv_aniso<T: Real>(g: &mut Graph<T>, x: Var, (h, w): (usize, usize)) -> Result<Var> {
    if g.value(x).numel() != h * w {
        return Err(Error::shape(format!(
            "prior expects a {h}x{w} image, input has {} entries",
            g.value(x).numel()
        )));
    }
    let mut total = g.scalar(T::zero());
    // vertical neighbors: whole rows at a time
    for i in 0..h.saturating_sub(1) {
        let row = g.slice(x, i * w, w)?;
        let next = g.slice(x, (i + 1) * w, w)?;
        let d = g.sub(next, row)?;
        let s = g.sum_abs(d)?;
        total = g.add(total, s)?;
    }
    // horizontal neighbors within each row
    if w > 1 {
        for i in 0..h {
            let left = g.slice(x, i * w, w - 1)?;
            let right = g.slice(x, i * w + 1, w - 1)?;
            let d = g.sub(right, left)?;
            let s = g.sum_abs(d)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// `||x - clip(x, 0, 1)||_2`
fn range_error<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let clipped = g.clip(x, T::zero(), T::one())?;
    let d = g.sub(x, clipped)?;
    g.l2_norm(d)
}
