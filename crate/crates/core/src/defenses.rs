//! Defense mechanisms as explicit conditional distributions over released
//! gradients.
//!
//! Each mechanism supports two things: sampling a released gradient from the
//! true gradient, and evaluating `log p(g | x)` up to an additive constant as
//! a traced expression in the true gradient — the quantity the reconstruction
//! attack ascends.
//!
//! Normalization constants are dropped throughout; they do not move the
//! argmax. The prune defenses marginalize the hidden mask, giving a
//! per-coordinate two-component mixture evaluated with log-sum-exp.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::Segment;
use crate::num::Real;
use crate::tensor::Tensor;

pub const DEFENSE_SCHEMA_VERSION: u32 = 1;

/// Tagged description of `p(g|x)`.
///
/// JSON form: `{"kind": "gaussian", "sigma": 0.1}`,
/// `{"kind": "prune_gaussian", "prune_rate": 0.5, "sigma": 0.1}`, etc.
/// `none` releases the true gradient (a Dirac conditional — it has no
/// density; attack it with the analytic inversion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseMechanism {
    None,
    Gaussian {
        sigma: f64,
    },
    Laplacian {
        b: f64,
    },
    PruneGaussian {
        prune_rate: f64,
        sigma: f64,
    },
    PruneLaplacian {
        prune_rate: f64,
        b: f64,
    },
    /// Scale to l2 norm <= clip_bound, then add Gaussian noise (DP-SGD style).
    ClipGaussian {
        clip_bound: f64,
        sigma: f64,
    },
    /// Zeroes a fraction of the defended layer's gradient coordinates and
    /// leaves every other layer untouched (local-perturbation stand-in).
    LayerPerturb {
        defended_layer: usize,
        perturb_mask_rate: f64,
    },
}

impl DefenseMechanism {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DefenseMechanism::None => "none",
            DefenseMechanism::Gaussian { .. } => "gaussian",
            DefenseMechanism::Laplacian { .. } => "laplacian",
            DefenseMechanism::PruneGaussian { .. } => "prune_gaussian",
            DefenseMechanism::PruneLaplacian { .. } => "prune_laplacian",
            DefenseMechanism::ClipGaussian { .. } => "clip_gaussian",
            DefenseMechanism::LayerPerturb { .. } => "layer_perturb",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            DefenseMechanism::None => Ok(()),
            DefenseMechanism::Gaussian { sigma } => {
                if sigma > 0.0 {
                    Ok(())
                } else {
                    bad(format!("gaussian sigma must be > 0, got {sigma}"))
                }
            }
            DefenseMechanism::Laplacian { b } => {
                if b > 0.0 {
                    Ok(())
                } else {
                    bad(format!("laplacian scale must be > 0, got {b}"))
                }
            }
            DefenseMechanism::PruneGaussian { prune_rate, sigma } => {
                if !(0.0..1.0).contains(&prune_rate) {
                    bad(format!("prune_rate must be in [0,1), got {prune_rate}"))
                } else if sigma <= 0.0 {
                    bad(format!("sigma must be > 0, got {sigma}"))
                } else {
                    Ok(())
                }
            }
            DefenseMechanism::PruneLaplacian { prune_rate, b } => {
                if !(0.0..1.0).contains(&prune_rate) {
                    bad(format!("prune_rate must be in [0,1), got {prune_rate}"))
                } else if b <= 0.0 {
                    bad(format!("laplacian scale must be > 0, got {b}"))
                } else {
                    Ok(())
                }
            }
            DefenseMechanism::ClipGaussian { clip_bound, sigma } => {
                if clip_bound <= 0.0 {
                    bad(format!("clip_bound must be > 0, got {clip_bound}"))
                } else if sigma <= 0.0 {
                    bad(format!("sigma must be > 0, got {sigma}"))
                } else {
                    Ok(())
                }
            }
            DefenseMechanism::LayerPerturb {
                perturb_mask_rate, ..
            } => {
                if (0.0..=1.0).contains(&perturb_mask_rate) {
                    Ok(())
                } else {
                    bad(format!(
                        "perturb_mask_rate must be in [0,1], got {perturb_mask_rate}"
                    ))
                }
            }
        }
    }

    /// Layer whose gradient segment this defense perturbs locally, if any.
    pub fn defended_layer(&self) -> Option<usize> {
        match *self {
            DefenseMechanism::LayerPerturb { defended_layer, .. } => Some(defended_layer),
            _ => None,
        }
    }
}

/// A gradient as the adversary observes it.
#[derive(Debug, Clone)]
pub struct ReleasedGradient<T: Real> {
    pub g: Tensor<T>,
    pub segments: Vec<Segment>,
    pub defense: DefenseMechanism,
    pub rng_seed: u64,
}

/// Applies the mechanism to a true gradient with a fresh stream seeded by
/// `seed`, so parallel trials are reproducible.
pub fn release<T: Real>(
    defense: &DefenseMechanism,
    true_grad: &Tensor<T>,
    segments: &[Segment],
    seed: u64,
) -> Result<ReleasedGradient<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample(defense, true_grad, segments, &mut rng)?;
    Ok(ReleasedGradient {
        g,
        segments: segments.to_vec(),
        defense: defense.clone(),
        rng_seed: seed,
    })
}

/// Draws one released gradient `g ~ p(g | x)`.
pub fn sample<T: Real>(
    defense: &DefenseMechanism,
    true_grad: &Tensor<T>,
    segments: &[Segment],
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    defense.validate()?;
    true_grad.check_finite("defense input gradient")?;
    let mut out = true_grad.data().to_vec();
    match *defense {
        DefenseMechanism::None => {}
        DefenseMechanism::Gaussian { sigma } => add_gaussian(&mut out, sigma, rng),
        DefenseMechanism::Laplacian { b } => add_laplacian(&mut out, b, rng),
        DefenseMechanism::PruneGaussian { prune_rate, sigma } => {
            prune(&mut out, prune_rate, rng);
            add_gaussian(&mut out, sigma, rng);
        }
        DefenseMechanism::PruneLaplacian { prune_rate, b } => {
            prune(&mut out, prune_rate, rng);
            add_laplacian(&mut out, b, rng);
        }
        DefenseMechanism::ClipGaussian { clip_bound, sigma } => {
            let norm = true_grad.l2_norm().as_f64();
            if norm > clip_bound {
                let s = T::of(clip_bound / norm);
                for v in out.iter_mut() {
                    *v *= s;
                }
            }
            add_gaussian(&mut out, sigma, rng);
        }
        DefenseMechanism::LayerPerturb {
            defended_layer,
            perturb_mask_rate,
        } => {
            let segs: Vec<&Segment> = segments
                .iter()
                .filter(|s| s.layer == defended_layer)
                .collect();
            if segs.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "layer_perturb: no segments for layer {defended_layer} \
                     (segmentation missing or layer out of range)"
                )));
            }
            for seg in segs {
                let count = (perturb_mask_rate * seg.len as f64).round() as usize;
                let picks = rand::seq::index::sample(rng, seg.len, count.min(seg.len));
                for i in picks {
                    out[seg.offset + i] = T::zero();
                }
            }
        }
    }
    Tensor::new(true_grad.shape().to_vec(), out)
}

fn add_gaussian<T: Real>(data: &mut [T], sigma: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0f64, sigma).expect("validated sigma");
    for v in data.iter_mut() {
        *v += T::of(normal.sample(rng));
    }
}

fn add_laplacian<T: Real>(data: &mut [T], b: f64, rng: &mut impl Rng) {
    for v in data.iter_mut() {
        *v += T::of(sample_laplace(b, rng));
    }
}

/// Inverse-CDF Laplace draw with location 0 and scale `b`.
pub fn sample_laplace(b: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn prune<T: Real>(data: &mut [T], rate: f64, rng: &mut impl Rng) {
    for v in data.iter_mut() {
        if rng.random_range(0.0..1.0) < rate {
            *v = T::zero();
        }
    }
}

/// Traced `log p(g_observed | x)` as a function of the true gradient, up to
/// an additive constant. `exclude_layers` drops whole layer segments from the
/// sum (the layer-drop attack); the `layer_perturb` defense always drops its
/// own defended layer.
pub fn log_density<T: Real>(
    g: &mut Graph<T>,
    defense: &DefenseMechanism,
    observed: &Tensor<T>,
    true_grad: Var,
    segments: &[Segment],
    exclude_layers: &BTreeSet<usize>,
) -> Result<Var> {
    defense.validate()?;
    if g.value(true_grad).shape() != observed.shape() {
        return Err(Error::shape(format!(
            "observed gradient {:?} vs true gradient {:?}",
            observed.shape(),
            g.value(true_grad).shape()
        )));
    }

    match *defense {
        DefenseMechanism::None => Err(Error::DegenerateConditional {
            kind: "none".into(),
        }),
        DefenseMechanism::Gaussian { sigma } => {
            let pairs = masked_pairs(g, observed, true_grad, segments, exclude_layers)?;
            let ssq = sum_sq_residual(g, &pairs)?;
            g.scale(ssq, T::of(-0.5 / (sigma * sigma)))
        }
        DefenseMechanism::Laplacian { b } => {
            let pairs = masked_pairs(g, observed, true_grad, segments, exclude_layers)?;
            let sab = sum_abs_residual(g, &pairs)?;
            g.scale(sab, T::of(-1.0 / b))
        }
        DefenseMechanism::PruneGaussian { prune_rate, sigma } => {
            let pairs = masked_pairs(g, observed, true_grad, segments, exclude_layers)?;
            if prune_rate == 0.0 {
                let ssq = sum_sq_residual(g, &pairs)?;
                return g.scale(ssq, T::of(-0.5 / (sigma * sigma)));
            }
            let mut total: Option<Var> = None;
            for (obs, grad) in &pairs {
                // Per coordinate: lse( ln p - g^2/(2s^2), ln(1-p) - (g-d)^2/(2s^2) )
                let inv2s2 = -0.5 / (sigma * sigma);
                let zeroed: Tensor<T> = Tensor::new(
                    obs.shape().to_vec(),
                    obs.data()
                        .iter()
                        .map(|&gi| T::of(prune_rate.ln()) + gi * gi * T::of(inv2s2))
                        .collect(),
                )?;
                let a = g.constant(zeroed);
                let obs_c = g.constant(obs.clone());
                let resid = g.sub(obs_c, *grad)?;
                let r2 = g.mul(resid, resid)?;
                let scaled = g.scale(r2, T::of(inv2s2))?;
                let b_term = g.add_scalar(scaled, T::of((1.0 - prune_rate).ln()))?;
                let lse = elementwise_lse2(g, a, b_term)?;
                let s = g.sum(lse)?;
                total = Some(match total {
                    None => s,
                    Some(t) => g.add(t, s)?,
                });
            }
            Ok(total.expect("at least one segment"))
        }
        DefenseMechanism::PruneLaplacian { prune_rate, b } => {
            let pairs = masked_pairs(g, observed, true_grad, segments, exclude_layers)?;
            if prune_rate == 0.0 {
                let sab = sum_abs_residual(g, &pairs)?;
                return g.scale(sab, T::of(-1.0 / b));
            }
            let mut total: Option<Var> = None;
            for (obs, grad) in &pairs {
                let inv_b = -1.0 / b;
                let zeroed: Tensor<T> = Tensor::new(
                    obs.shape().to_vec(),
                    obs.data()
                        .iter()
                        .map(|&gi| T::of(prune_rate.ln()) + gi.abs() * T::of(inv_b))
                        .collect(),
                )?;
                let a = g.constant(zeroed);
                let obs_c = g.constant(obs.clone());
                let resid = g.sub(obs_c, *grad)?;
                let rabs = g.abs(resid)?;
                let scaled = g.scale(rabs, T::of(inv_b))?;
                let b_term = g.add_scalar(scaled, T::of((1.0 - prune_rate).ln()))?;
                let lse = elementwise_lse2(g, a, b_term)?;
                let s = g.sum(lse)?;
                total = Some(match total {
                    None => s,
                    Some(t) => g.add(t, s)?,
                });
            }
            Ok(total.expect("at least one segment"))
        }
        DefenseMechanism::ClipGaussian { clip_bound, sigma } => {
            // Gaussian centered on the clipped gradient. The clip scale is
            // computed from the full vector (that is what the mechanism does)
            // and is differentiable a.e. through the norm.
            let norm = g.l2_norm(true_grad)?;
            let bound = g.scalar(T::of(clip_bound));
            let ratio = g.div(bound, norm)?;
            let one = g.scalar(T::one());
            let s = g.min_scalar(one, ratio)?;
            let shape = g.value(true_grad).shape().to_vec();
            let s_b = g.broadcast(s, shape)?;
            let clipped = g.mul(true_grad, s_b)?;
            let pairs = masked_pairs(g, observed, clipped, segments, exclude_layers)?;
            let ssq = sum_sq_residual(g, &pairs)?;
            g.scale(ssq, T::of(-0.5 / (sigma * sigma)))
        }
        DefenseMechanism::LayerPerturb { defended_layer, .. } => {
            // Layerwise-Gaussian surrogate: the defended layer's conditional
            // carries no usable signal, every other layer is treated as a
            // unit-variance Gaussian around the true gradient (the overall
            // scale is absorbed into the objective and beta).
            if segments.is_empty() {
                return Err(Error::InvalidConfig(
                    "layer_perturb density requires a segmentation".into(),
                ));
            }
            let mut exclude = exclude_layers.clone();
            exclude.insert(defended_layer);
            let pairs = masked_pairs(g, observed, true_grad, segments, &exclude)?;
            let ssq = sum_sq_residual(g, &pairs)?;
            g.scale(ssq, T::of(-0.5))
        }
    }
}

/// (observed slice, true-grad slice) pairs covering every non-excluded layer.
/// With nothing excluded this is a single full-vector pair.
fn masked_pairs<T: Real>(
    g: &mut Graph<T>,
    observed: &Tensor<T>,
    true_grad: Var,
    segments: &[Segment],
    exclude_layers: &BTreeSet<usize>,
) -> Result<Vec<(Tensor<T>, Var)>> {
    if exclude_layers.is_empty() {
        return Ok(vec![(observed.clone(), true_grad)]);
    }
    if segments.is_empty() {
        return Err(Error::InvalidConfig(
            "layer exclusion requires a segmentation".into(),
        ));
    }
    let mut pairs = Vec::new();
    for seg in segments {
        if exclude_layers.contains(&seg.layer) {
            continue;
        }
        let obs = Tensor::new(
            vec![seg.len],
            observed.data()[seg.offset..seg.offset + seg.len].to_vec(),
        )?;
        let grad = g.slice(true_grad, seg.offset, seg.len)?;
        pairs.push((obs, grad));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "layer exclusion removed every parameter segment".into(),
        ));
    }
    Ok(pairs)
}

fn sum_sq_residual<T: Real>(g: &mut Graph<T>, pairs: &[(Tensor<T>, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (obs, grad) in pairs {
        let obs_c = g.constant(obs.clone());
        let r = g.sub(obs_c, *grad)?;
        let s = g.sum_sq(r)?;
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    Ok(total.expect("non-empty pairs"))
}

fn sum_abs_residual<T: Real>(g: &mut Graph<T>, pairs: &[(Tensor<T>, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (obs, grad) in pairs {
        let obs_c = g.constant(obs.clone());
        let r = g.sub(obs_c, *grad)?;
        let s = g.sum_abs(r)?;
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    Ok(total.expect("non-empty pairs"))
}

/// Elementwise `log(exp(a) + exp(b))`, stabilized by the elementwise max.
/// The max path contributes exactly zero gradient, so the kink in
/// `max = a + relu(b - a)` is harmless.
fn elementwise_lse2<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(b, a)?;
    let r = g.relu(d)?;
    let m = g.add(a, r)?;
    let am = g.sub(a, m)?;
    let bm = g.sub(b, m)?;
    let ea = g.exp(am)?;
    let eb = g.exp(bm)?;
    let s = g.add(ea, eb)?;
    let l = g.log(s)?;
    g.add(m, l)
}
