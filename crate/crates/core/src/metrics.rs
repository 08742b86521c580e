//! Reconstruction quality metrics.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::Tensor;

/// Mean squared error between two same-shaped tensors.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "mse on {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// Peak signal-to-noise ratio `10 log10(max_val^2 / MSE)` in dB.
/// A perfect reconstruction (MSE = 0) reports `f64::INFINITY`; serializers
/// write it as the string `"inf"`.
pub fn psnr<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>, max_val: f64) -> Result<f64> {
    let m = mse(x, x_hat)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Formats a float with 17 significant digits; infinities as `inf`/`-inf`.
/// Round-trips exactly through `str::parse::<f64>`.
pub fn format_float(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}
