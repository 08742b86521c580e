//! Closed-form, optimization-free reconstruction from an unperturbed
//! fully-connected first layer.
//!
//! For a first layer `y0 = A0 x + b0` under any scalar loss, the chain rule
//! gives `dl/dA0[i,:] = dl/db0[i] * x`, so any row with a nonzero bias
//! gradient recovers the input exactly: `x = gA[i,:] / gb[i]`. This is the
//! route used when the defense releases the true gradient (a Dirac
//! conditional that no optimizer objective can represent).

pub use crate::metrics::psnr as psnr_of_exact;

use crate::defenses::ReleasedGradient;
use crate::error::{Error, Result};
use crate::models::SegmentKind;
use crate::num::Real;
use crate::tensor::Tensor;

/// Bias gradients below this magnitude are treated as unusable.
pub const BIAS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct InversionResult<T: Real> {
    /// Reconstruction from the best-conditioned row (largest |gb|).
    pub x: Tensor<T>,
    /// Equal-weight average of every valid row's reconstruction; identical to
    /// `x` on clean gradients, noise-amplified rows drag it off otherwise.
    pub x_averaged: Tensor<T>,
    /// Row with the largest |bias gradient|.
    pub primary_row: usize,
    /// Rows whose bias gradient exceeded tolerance.
    pub rows_used: Vec<usize>,
    /// Max l-infinity disagreement between per-row reconstructions and their
    /// average; ~0 on clean gradients.
    pub consistency_residual: f64,
}

/// Recovers `x` from the first layer's weight gradient (`rows x input_dim`)
/// and bias gradient (`rows`).
///
/// Every row above [`BIAS_TOLERANCE`] is inverted. The returned `x` comes
/// from the max-|gb| row (best conditioning); when several rows are valid
/// their average and a cross-row consistency residual are reported alongside.
pub fn invert_first_layer<T: Real>(ga: &Tensor<T>, gb: &Tensor<T>) -> Result<InversionResult<T>> {
    let gash = ga.shape();
    if gash.len() != 2 || gb.shape().len() != 1 || gash[0] != gb.shape()[0] {
        return Err(Error::shape(format!(
            "weight grad {:?} not row-aligned with bias grad {:?}",
            gash,
            gb.shape()
        )));
    }
    let (rows, dim) = (gash[0], gash[1]);
    let tol = T::of(BIAS_TOLERANCE);

    let rows_used: Vec<usize> = (0..rows).filter(|&i| gb.data()[i].abs() > tol).collect();
    if rows_used.is_empty() {
        return Err(Error::NoUsableNeuron {
            tolerance: BIAS_TOLERANCE,
        });
    }
    let primary_row = rows_used
        .iter()
        .copied()
        .max_by(|&a, &b| gb.data()[a].abs().partial_cmp(&gb.data()[b].abs()).unwrap())
        .unwrap();

    let per_row: Vec<Vec<T>> = rows_used
        .iter()
        .map(|&i| {
            let inv = T::one() / gb.data()[i];
            (0..dim).map(|j| ga.at(i, j) * inv).collect()
        })
        .collect();

    let scale = T::of(1.0 / rows_used.len() as f64);
    let mut avg = vec![T::zero(); dim];
    for row in &per_row {
        for (a, &v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in avg.iter_mut() {
        *a *= scale;
    }

    let mut residual = 0.0f64;
    for row in &per_row {
        for (&v, &a) in row.iter().zip(&avg) {
            residual = residual.max((v - a).abs().as_f64());
        }
    }

    let primary_idx = rows_used
        .iter()
        .position(|&r| r == primary_row)
        .expect("primary row is a used row");
    Ok(InversionResult {
        x: Tensor::new(vec![dim], per_row[primary_idx].clone())?,
        x_averaged: Tensor::new(vec![dim], avg)?,
        primary_row,
        rows_used,
        consistency_residual: residual,
    })
}

/// Extracts the first layer's (weight grad, bias grad) from a released
/// gradient using its segmentation.
pub fn first_layer_grads<T: Real>(
    released: &ReleasedGradient<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let w = released
        .segments
        .iter()
        .find(|s| s.layer == 0 && s.kind == SegmentKind::Weight)
        .ok_or_else(|| Error::InvalidConfig("no layer-0 weight segment".into()))?;
    let b = released
        .segments
        .iter()
        .find(|s| s.layer == 0 && s.kind == SegmentKind::Bias)
        .ok_or_else(|| Error::InvalidConfig("no layer-0 bias segment".into()))?;
    let ga = Tensor::new(
        vec![w.rows, w.cols],
        released.g.data()[w.offset..w.offset + w.len].to_vec(),
    )?;
    let gb = Tensor::new(
        vec![b.len],
        released.g.data()[b.offset..b.offset + b.len].to_vec(),
    )?;
    Ok((ga, gb))
}

/// Full pipeline: invert a released gradient of an MLP whose first layer is
/// fully connected.
pub fn invert_released<T: Real>(released: &ReleasedGradient<T>) -> Result<InversionResult<T>> {
    let (ga, gb) = first_layer_grads(released)?;
    invert_first_layer(&ga, &gb)
}
