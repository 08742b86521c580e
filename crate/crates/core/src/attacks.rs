//! Optimization-based reconstruction attacks.
//!
//! The central attack ascends the Monte Carlo objective
//! `(1/k) sum_i [ log p(g | x_i) + beta * log p(x_i) ]` with `x_i` drawn
//! uniformly from the l2 ball of radius `delta` around the current iterate,
//! using Adam with an exponential learning-rate schedule. The classic
//! gradient-matching attacks fall out as special cases of the conditional
//! term: `l2` and `l1` are the Gaussian and Laplacian densities up to scale,
//! `cosine` is the normalized-correlation loss. The layer-drop attack is the
//! same loop with a defended layer's segments excluded from the gradient
//! term.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::defenses::{self, DefenseMechanism, ReleasedGradient};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{self, NetworkSpec, NetworkState, Segment, SegmentKind};
use crate::num::Real;
use crate::priors::{self, PriorSpec};
use crate::tensor::Tensor;

/// Gradient-similarity term of the attack objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Conditional {
    /// The defense's own log density. `assumed_defense` overrides the defense
    /// recorded on the released gradient (used for mismatched-attack
    /// ablations); by default the attacker knows the true mechanism.
    Bayes {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        assumed_defense: Option<DefenseMechanism>,
    },
    /// `-||g - grad||_2^2`
    L2,
    /// `-||g - grad||_1`
    L1,
    /// `g . grad / (||g|| ||grad||)`
    Cosine,
}

impl Conditional {
    pub fn bayes() -> Self {
        Conditional::Bayes {
            assumed_defense: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Conditional::Bayes { .. } => "bayes",
            Conditional::L2 => "l2",
            Conditional::L1 => "l1",
            Conditional::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackInit {
    GaussianNoise,
    Zeros,
    Provided { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelStrategy {
    /// Label supplied by the caller.
    Known { y: usize },
    /// Recover from the last-layer bias gradient; use the argmin even if
    /// ambiguous.
    Recover,
    /// Recover, but fall back to jointly optimizing a relaxed label
    /// distribution when the recovery is ambiguous.
    RecoverOrJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient ascent.
    Sgd,
}

fn default_lr_decay() -> f64 {
    1.0
}
fn default_k() -> usize {
    1
}
fn default_beta() -> f64 {
    1.0
}
fn default_init() -> AttackInit {
    AttackInit::GaussianNoise
}
fn default_prior() -> PriorSpec {
    PriorSpec::Uniform
}
fn default_label() -> LabelStrategy {
    LabelStrategy::Recover
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

/// Everything that determines a reconstruction run. Serializes to JSON for
/// experiment configs; every field has a CLI flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Monte Carlo samples per step (>= 1). `delta = 0` degenerates the ball
    /// to its center and forces an effective `k` of 1.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Ball radius (>= 0).
    #[serde(default)]
    pub delta: f64,
    pub steps: usize,
    pub lr: f64,
    /// Multiplicative per-step factor in (0, 1].
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Prior weight (>= 0).
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_init")]
    pub init: AttackInit,
    pub conditional: Conditional,
    #[serde(default = "default_prior")]
    pub prior: PriorSpec,
    /// Layers excluded from the gradient term (layer-drop attack).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub layer_mask: BTreeSet<usize>,
    #[serde(default = "default_label")]
    pub label: LabelStrategy,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Exponential layer weighting for the l2/l1/cosine gradient terms:
    /// segment weight `gamma^(L-1-l)` for 0-based layer `l` (last layer
    /// weight 1). Off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_weight_gamma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    /// A plain single-sample attack template; callers override fields.
    pub fn basic(conditional: Conditional, steps: usize, lr: f64, seed: u64) -> Self {
        AttackConfig {
            k: 1,
            delta: 0.0,
            steps,
            lr,
            lr_decay: 1.0,
            beta: 1.0,
            init: AttackInit::GaussianNoise,
            conditional,
            prior: PriorSpec::Uniform,
            layer_mask: BTreeSet::new(),
            label: LabelStrategy::Recover,
            optimizer: OptimizerKind::Adam,
            layer_weight_gamma: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidConfig("delta must be >= 0".into()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if self.lr_decay.is_nan() || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::InvalidConfig("lr_decay must be in (0, 1]".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig("beta must be >= 0".into()));
        }
        if let Some(g) = self.layer_weight_gamma {
            if g.is_nan() || g <= 0.0 {
                return Err(Error::InvalidConfig(
                    "layer weighting gamma must be > 0".into(),
                ));
            }
        }
        if let Conditional::Bayes {
            assumed_defense: Some(d),
        } = &self.conditional
        {
            d.validate()?;
        }
        self.prior.validate()
    }

    fn effective_k(&self) -> usize {
        if self.delta == 0.0 {
            1
        } else {
            self.k
        }
    }
}

/// Reconstruction output with per-step traces. Trace entry `i` is measured at
/// the iterate *before* update `i`, so runs sharing an init start at the same
/// distance; `x_hat` is the final iterate after the last update and
/// `final_objective` is the (single-sample) objective evaluated there.
#[derive(Debug, Clone)]
pub struct ReconstructionResult<T: Real> {
    pub x_hat: Tensor<T>,
    pub objective_trace: Vec<f64>,
    pub distance_trace: Option<Vec<f64>>,
    pub psnr: Option<f64>,
    pub steps_run: usize,
    pub final_objective: f64,
    pub label_used: usize,
}

/// Label read off the last-layer bias gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveredLabel {
    pub label: usize,
    /// Number of strictly negative bias-gradient coordinates; exactly 1 on a
    /// clean gradient (softmax - onehot has a single negative entry).
    pub negative_count: usize,
}

impl RecoveredLabel {
    pub fn is_ambiguous(&self) -> bool {
        self.negative_count != 1
    }
}

/// Recovers the class index from the last fully-connected layer's bias
/// gradient: under cross-entropy at batch size 1 that gradient is
/// `softmax(logits) - onehot(y)`, whose only negative coordinate is `y`.
/// The argmin stays correct under light noise.
pub fn recover_label<T: Real>(released: &ReleasedGradient<T>) -> Result<RecoveredLabel> {
    let seg = last_bias_segment(&released.segments)?;
    let data = &released.g.data()[seg.offset..seg.offset + seg.len];
    let mut label = 0usize;
    let mut best = T::infinity();
    let mut negative_count = 0usize;
    for (i, &v) in data.iter().enumerate() {
        if v < T::zero() {
            negative_count += 1;
        }
        if v < best {
            best = v;
            label = i;
        }
    }
    Ok(RecoveredLabel {
        label,
        negative_count,
    })
}

fn last_bias_segment(segments: &[Segment]) -> Result<&Segment> {
    segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Bias)
        .max_by_key(|s| s.layer)
        .ok_or_else(|| Error::InvalidConfig("released gradient has no bias segments".into()))
}

/// `k` i.i.d. points uniform in the l2 ball of radius `delta` around
/// `center`: direction from a normalized Gaussian, radius `delta * U^(1/d)`.
pub fn sample_ball<T: Real>(
    center: &Tensor<T>,
    delta: f64,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor<T>>> {
    let offsets = ball_offsets::<T>(center.numel(), delta, k, rng)?;
    offsets.into_iter().map(|o| center.add(&o)).collect()
}

fn ball_offsets<T: Real>(
    dim: usize,
    delta: f64,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor<T>>> {
    if delta < 0.0 {
        return Err(Error::InvalidConfig("delta must be >= 0".into()));
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        if delta == 0.0 {
            out.push(Tensor::zeros(&[dim]));
            continue;
        }
        let mut dir: Vec<f64> = (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // astronomically unlikely; retry via zero offset
            out.push(Tensor::zeros(&[dim]));
            continue;
        }
        let u: f64 = rng.random_range(0.0..1.0);
        let radius = delta * u.powf(1.0 / dim as f64);
        for v in dir.iter_mut() {
            *v = *v / norm * radius;
        }
        out.push(Tensor::from_f64s(vec![dim], &dir)?);
    }
    Ok(out)
}

// ── objective construction ──────────────────────────────────────────

struct ObjectiveContext<'a, T: Real> {
    config: &'a AttackConfig,
    released: &'a ReleasedGradient<T>,
    spec: &'a NetworkSpec,
    theta: Var,
    label: LabelNode,
}

#[derive(Clone, Copy)]
enum LabelNode {
    Hard(usize),
    /// Free logits var for the joint (x, y) relaxation.
    Soft(Var),
}

/// Appends one sample's `log p(g|x_s) + beta * log p(x_s)` to the graph.
fn sample_term<T: Real>(g: &mut Graph<T>, ctx: &ObjectiveContext<'_, T>, x_s: Var) -> Result<Var> {
    let loss = match ctx.label {
        LabelNode::Hard(y) => models::loss_traced(g, ctx.spec, ctx.theta, x_s, y)?,
        LabelNode::Soft(ylogits) => {
            let q = g.softmax(ylogits)?;
            models::soft_loss_traced(g, ctx.spec, ctx.theta, x_s, q)?
        }
    };
    let inner_grad = g.grad(loss, &[ctx.theta])?[0];
    let cond = conditional_term(g, ctx, inner_grad)?;
    let prior = priors::log_prior(g, &ctx.config.prior, x_s)?;
    let weighted = g.scale(prior, T::of(ctx.config.beta))?;
    g.add(cond, weighted)
}

fn conditional_term<T: Real>(
    g: &mut Graph<T>,
    ctx: &ObjectiveContext<'_, T>,
    inner_grad: Var,
) -> Result<Var> {
    let cfg = ctx.config;
    let released = ctx.released;
    match &cfg.conditional {
        Conditional::Bayes { assumed_defense } => {
            let defense = assumed_defense.as_ref().unwrap_or(&released.defense);
            defenses::log_density(
                g,
                defense,
                &released.g,
                inner_grad,
                &released.segments,
                &cfg.layer_mask,
            )
        }
        Conditional::L2 => {
            let pairs = gradient_pairs(g, released, inner_grad, &cfg.layer_mask)?;
            let weights = segment_weights(cfg, &pairs);
            let mut total = g.scalar(T::zero());
            for ((obs, grad), w) in pairs.iter().zip(&weights) {
                let obs_c = g.constant(obs.clone());
                let r = g.sub(obs_c, *grad)?;
                let s = g.sum_sq(r)?;
                let s = g.scale(s, T::of(*w))?;
                total = g.add(total, s)?;
            }
            g.neg(total)
        }
        Conditional::L1 => {
            let pairs = gradient_pairs(g, released, inner_grad, &cfg.layer_mask)?;
            let weights = segment_weights(cfg, &pairs);
            let mut total = g.scalar(T::zero());
            for ((obs, grad), w) in pairs.iter().zip(&weights) {
                let obs_c = g.constant(obs.clone());
                let r = g.sub(obs_c, *grad)?;
                let s = g.sum_abs(r)?;
                let s = g.scale(s, T::of(*w))?;
                total = g.add(total, s)?;
            }
            g.neg(total)
        }
        Conditional::Cosine => {
            let pairs = gradient_pairs(g, released, inner_grad, &cfg.layer_mask)?;
            match cfg.layer_weight_gamma {
                None => {
                    // global cosine over the included coordinates
                    let mut dot = g.scalar(T::zero());
                    let mut grad_sq = g.scalar(T::zero());
                    let mut obs_sq = 0.0f64;
                    for (obs, grad) in &pairs {
                        let obs_c = g.constant(obs.clone());
                        let d = g.dot(obs_c, *grad)?;
                        dot = g.add(dot, d)?;
                        let s = g.sum_sq(*grad)?;
                        grad_sq = g.add(grad_sq, s)?;
                        obs_sq += obs
                            .data()
                            .iter()
                            .map(|v| v.as_f64() * v.as_f64())
                            .sum::<f64>();
                    }
                    let grad_norm = g.sqrt(grad_sq)?;
                    let denom = g.scale(grad_norm, T::of(obs_sq.sqrt()))?;
                    g.div(dot, denom)
                }
                Some(_) => {
                    // weighted mean of per-segment cosines
                    let weights = segment_weights(cfg, &pairs);
                    let wsum: f64 = weights.iter().sum();
                    let mut total = g.scalar(T::zero());
                    for ((obs, grad), w) in pairs.iter().zip(&weights) {
                        let obs_c = g.constant(obs.clone());
                        let d = g.dot(obs_c, *grad)?;
                        let gn = g.l2_norm(*grad)?;
                        let on = obs
                            .data()
                            .iter()
                            .map(|v| v.as_f64() * v.as_f64())
                            .sum::<f64>()
                            .sqrt();
                        let denom = g.scale(gn, T::of(on))?;
                        let c = g.div(d, denom)?;
                        let c = g.scale(c, T::of(*w / wsum))?;
                        total = g.add(total, c)?;
                    }
                    Ok(total)
                }
            }
        }
    }
}

/// (observed slice, traced-gradient slice) pairs with masked layers removed;
/// one full-vector pair when nothing is masked.
fn gradient_pairs<T: Real>(
    g: &mut Graph<T>,
    released: &ReleasedGradient<T>,
    inner_grad: Var,
    layer_mask: &BTreeSet<usize>,
) -> Result<Vec<(Tensor<T>, Var)>> {
    // Only the attacker's own mask drops segments here: a naive matching
    // attack against a locally-perturbed defense deliberately keeps the
    // corrupted layer (that mismatch is what the layer-drop attack removes).
    if layer_mask.is_empty() {
        return Ok(vec![(released.g.clone(), inner_grad)]);
    }
    let mut pairs = Vec::new();
    for seg in &released.segments {
        if layer_mask.contains(&seg.layer) {
            continue;
        }
        let obs = Tensor::new(
            vec![seg.len],
            released.g.data()[seg.offset..seg.offset + seg.len].to_vec(),
        )?;
        let grad = g.slice(inner_grad, seg.offset, seg.len)?;
        pairs.push((obs, grad));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "layer mask removed every parameter segment".into(),
        ));
    }
    Ok(pairs)
}

fn segment_weights<T: Real>(cfg: &AttackConfig, pairs: &[(Tensor<T>, Var)]) -> Vec<f64> {
    match cfg.layer_weight_gamma {
        None => vec![1.0; pairs.len()],
        Some(gamma) => {
            let n = pairs.len();
            (0..n).map(|i| gamma.powi((n - 1 - i) as i32)).collect()
        }
    }
}

fn validate_mask(config: &AttackConfig, segments: &[Segment]) -> Result<()> {
    let layer_count = segments.iter().map(|s| s.layer + 1).max().unwrap_or(0);
    for &l in &config.layer_mask {
        let has_params = segments.iter().any(|s| s.layer == l && s.len > 0);
        if !has_params {
            return Err(Error::InvalidConfig(format!(
                "layer mask references layer {l} with no parameters"
            )));
        }
    }
    if layer_count > 0 && config.layer_mask.len() >= layer_count {
        return Err(Error::InvalidConfig(
            "layer mask must leave at least one layer".into(),
        ));
    }
    Ok(())
}

/// Single-sample objective `log p(g|x) + beta log p(x)` and its gradient in
/// `x`, evaluated exactly at `x` (no ball sampling). This is the quantity the
/// Monte Carlo loop averages over ball samples.
pub fn objective_and_gradient<T: Real>(
    config: &AttackConfig,
    x: &Tensor<T>,
    released: &ReleasedGradient<T>,
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    y: usize,
) -> Result<(f64, Tensor<T>)> {
    config.validate()?;
    validate_mask(config, &released.segments)?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let theta = g.leaf(state.theta.clone());
    let ctx = ObjectiveContext {
        config,
        released,
        spec,
        theta,
        label: LabelNode::Hard(y),
    };
    let obj = sample_term(&mut g, &ctx, xv)?;
    let value = g.scalar_value(obj)?.as_f64();
    let dx = g.grad(obj, &[xv])?[0];
    Ok((value, g.value(dx).clone()))
}

/// Ball-averaged Monte Carlo objective value at `x` using `config.k` samples
/// drawn from `rng`. Exposed for estimator-variance analysis.
pub fn ball_objective_value<T: Real>(
    config: &AttackConfig,
    x: &Tensor<T>,
    released: &ReleasedGradient<T>,
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    y: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    config.validate()?;
    validate_mask(config, &released.segments)?;
    let k = config.effective_k();
    let offsets = ball_offsets::<T>(x.numel(), config.delta, k, rng)?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let theta = g.leaf(state.theta.clone());
    let ctx = ObjectiveContext {
        config,
        released,
        spec,
        theta,
        label: LabelNode::Hard(y),
    };
    let obj = averaged_objective(&mut g, &ctx, xv, &offsets)?;
    Ok(g.scalar_value(obj)?.as_f64())
}

fn averaged_objective<T: Real>(
    g: &mut Graph<T>,
    ctx: &ObjectiveContext<'_, T>,
    x: Var,
    offsets: &[Tensor<T>],
) -> Result<Var> {
    let k = offsets.len();
    let mut total: Option<Var> = None;
    for offset in offsets {
        let x_s = if offset.data().iter().all(|v| *v == T::zero()) {
            x
        } else {
            let o = g.constant(offset.clone());
            g.add(x, o)?
        };
        let term = sample_term(g, ctx, x_s)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    let total = total.expect("k >= 1");
    if k > 1 {
        g.scale(total, T::of(1.0 / k as f64))
    } else {
        Ok(total)
    }
}

// ── optimizers ──────────────────────────────────────────────────────

struct AdamState<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> AdamState<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize) -> Self {
        AdamState {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
        }
    }

    /// One ascent step (maximization).
    fn ascend(&mut self, x: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let b1 = T::of(Self::BETA1);
        let b2 = T::of(Self::BETA2);
        let bc1 = T::of(1.0 - Self::BETA1.powi(self.t));
        let bc2 = T::of(1.0 - Self::BETA2.powi(self.t));
        let eps = T::of(Self::EPS);
        let step = T::of(lr);
        for i in 0..x.len() {
            let gi = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * gi;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * gi * gi;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            x[i] += step * mhat / (vhat.sqrt() + eps);
        }
    }
}

// ── the main loop ───────────────────────────────────────────────────

/// Runs the configured attack against one released gradient.
///
/// Deterministic given `(config, released)`: the init draw and every ball
/// sample come from one stream seeded with `config.seed`.
pub fn run_attack<T: Real>(
    config: &AttackConfig,
    released: &ReleasedGradient<T>,
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    x_orig: Option<&Tensor<T>>,
) -> Result<ReconstructionResult<T>> {
    config.validate()?;
    validate_mask(config, &released.segments)?;
    if matches!(
        config.conditional,
        Conditional::Bayes {
            assumed_defense: None
        }
    ) && released.defense == DefenseMechanism::None
    {
        return Err(Error::DegenerateConditional {
            kind: "none".into(),
        });
    }

    let dim = spec.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut x: Vec<T> = match &config.init {
        AttackInit::GaussianNoise => (0..dim)
            .map(|_| {
                T::of(<StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut rng,
                ))
            })
            .collect(),
        AttackInit::Zeros => vec![T::zero(); dim],
        AttackInit::Provided { values } => {
            if values.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "provided init has {} values, input dim is {dim}",
                    values.len()
                )));
            }
            values.iter().map(|&v| T::of(v)).collect()
        }
    };

    // Resolve the label once; the network state is fixed during the attack.
    let (label_node_soft, label_used) = match config.label {
        LabelStrategy::Known { y } => {
            if y >= spec.class_count() {
                return Err(Error::InvalidConfig(format!(
                    "label {y} out of range for {} classes",
                    spec.class_count()
                )));
            }
            (false, y)
        }
        LabelStrategy::Recover => (false, recover_label(released)?.label),
        LabelStrategy::RecoverOrJoint => {
            let rec = recover_label(released)?;
            (rec.is_ambiguous(), rec.label)
        }
    };

    let k = config.effective_k();
    let mut objective_trace = Vec::with_capacity(config.steps);
    let mut distance_trace = x_orig.map(|_| Vec::with_capacity(config.steps));
    let mut adam_x = AdamState::<T>::new(dim);
    let mut ylogits: Vec<T> = vec![T::zero(); spec.class_count()];
    let mut adam_y = AdamState::<T>::new(spec.class_count());

    for step in 0..config.steps {
        let lr_t = config.lr * config.lr_decay.powi(step as i32);
        let offsets = ball_offsets::<T>(dim, config.delta, k, &mut rng)?;

        let mut g = Graph::new();
        let xv = g.leaf(Tensor::new(vec![dim], x.clone())?);
        let theta = g.leaf(state.theta.clone());
        let label = if label_node_soft {
            LabelNode::Soft(g.leaf(Tensor::new(vec![spec.class_count()], ylogits.clone())?))
        } else {
            LabelNode::Hard(label_used)
        };
        let ctx = ObjectiveContext {
            config,
            released,
            spec,
            theta,
            label,
        };
        let obj = averaged_objective(&mut g, &ctx, xv, &offsets)?;
        let value = g.scalar_value(obj)?.as_f64();
        if !value.is_finite() {
            return Err(Error::AttackAborted { step });
        }

        objective_trace.push(value);
        if let (Some(trace), Some(orig)) = (distance_trace.as_mut(), x_orig) {
            let current = Tensor::new(vec![dim], x.clone())?;
            trace.push(current.l2_distance(orig)?.as_f64());
        }

        match label {
            LabelNode::Hard(_) => {
                let dx = g.grad(obj, &[xv])?[0];
                let grad = g.value(dx);
                grad.check_finite("attack step gradient")
                    .map_err(|_| Error::AttackAborted { step })?;
                apply_update(config.optimizer, &mut adam_x, &mut x, grad.data(), lr_t);
            }
            LabelNode::Soft(yv) => {
                let grads = g.grad(obj, &[xv, yv])?;
                let gx = g.value(grads[0]).clone();
                let gy = g.value(grads[1]);
                gx.check_finite("attack step gradient")
                    .map_err(|_| Error::AttackAborted { step })?;
                apply_update(config.optimizer, &mut adam_x, &mut x, gx.data(), lr_t);
                apply_update(config.optimizer, &mut adam_y, &mut ylogits, gy.data(), lr_t);
            }
        }
    }

    let x_hat = Tensor::new(vec![dim], x)?;
    let final_label = if label_node_soft {
        ylogits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    } else {
        label_used
    };

    // Final objective at the returned iterate (single sample, exact center).
    let final_objective = {
        let mut g = Graph::new();
        let xv = g.leaf(x_hat.clone());
        let theta = g.leaf(state.theta.clone());
        let ctx = ObjectiveContext {
            config,
            released,
            spec,
            theta,
            label: LabelNode::Hard(final_label),
        };
        let obj = sample_term(&mut g, &ctx, xv)?;
        g.scalar_value(obj)?.as_f64()
    };

    let psnr = match x_orig {
        Some(orig) => Some(metrics::psnr(orig, &x_hat, 1.0)?),
        None => None,
    };

    Ok(ReconstructionResult {
        x_hat,
        objective_trace,
        distance_trace,
        psnr,
        steps_run: config.steps,
        final_objective,
        label_used: final_label,
    })
}

fn apply_update<T: Real>(
    optimizer: OptimizerKind,
    adam: &mut AdamState<T>,
    x: &mut [T],
    grad: &[T],
    lr: f64,
) {
    match optimizer {
        OptimizerKind::Adam => adam.ascend(x, grad, lr),
        OptimizerKind::Sgd => {
            let step = T::of(lr);
            for (xi, &gi) in x.iter_mut().zip(grad) {
                *xi += step * gi;
            }
        }
    }
}

// ── layer-drop attack ───────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LayerDropResult<T: Real> {
    pub best_layer: usize,
    pub best: ReconstructionResult<T>,
    /// Per-candidate (layer, final objective per included gradient
    /// coordinate) in sweep mode.
    pub sweep: Vec<(usize, f64)>,
}

/// Gradient matching with a defended layer's segments excluded.
///
/// With `defended_layer = Some(l)` runs once with mask `{l}`. With `None`
/// the attacker does not know the defended layer and sweeps every layer.
/// Sweep candidates drop different parameter counts, so raw objectives are
/// not comparable; the argmax is taken over the final objective per included
/// gradient coordinate (ties to the smallest layer index).
pub fn layer_drop_attack<T: Real>(
    config: &AttackConfig,
    released: &ReleasedGradient<T>,
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    defended_layer: Option<usize>,
    x_orig: Option<&Tensor<T>>,
) -> Result<LayerDropResult<T>> {
    let candidates: Vec<usize> = match defended_layer {
        Some(l) => vec![l],
        None => (0..spec.layer_count()).collect(),
    };
    let total_params: usize = released.segments.iter().map(|s| s.len).sum();
    let mut best: Option<(usize, f64, ReconstructionResult<T>)> = None;
    let mut sweep = Vec::with_capacity(candidates.len());
    for l in candidates {
        let mut cfg = config.clone();
        cfg.layer_mask = BTreeSet::from([l]);
        let result = run_attack(&cfg, released, spec, state, x_orig)?;
        let dropped: usize = released
            .segments
            .iter()
            .filter(|s| s.layer == l)
            .map(|s| s.len)
            .sum();
        let included = total_params - dropped;
        if included == 0 {
            return Err(Error::InvalidConfig(format!(
                "dropping layer {l} leaves no parameter segments"
            )));
        }
        let score = result.final_objective / included as f64;
        sweep.push((l, score));
        let better = match &best {
            None => true,
            Some((_, b, _)) => score > *b,
        };
        if better {
            best = Some((l, score, result));
        }
    }
    let (best_layer, _, best) = best.expect("at least one candidate layer");
    Ok(LayerDropResult {
        best_layer,
        best,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_parameters, loss_and_param_grad, LabeledExample};

    fn small_net(seed: u64) -> (NetworkSpec, NetworkState<f64>) {
        let spec = NetworkSpec::new(vec![6, 5, 3], seed).unwrap();
        let state = init_parameters::<f64>(&spec);
        (spec, state)
    }

    fn released_for(
        spec: &NetworkSpec,
        state: &NetworkState<f64>,
        defense: &DefenseMechanism,
        x: &Tensor<f64>,
        y: usize,
        seed: u64,
    ) -> ReleasedGradient<f64> {
        let ex = LabeledExample { x: x.clone(), y };
        let (_, grad) = loss_and_param_grad(spec, state, &ex).unwrap();
        defenses::release(defense, &grad, &state.segments, seed).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ball_samples_respect_radius_and_degenerate_delta() {
        let center = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let pts = sample_ball(&center, 0.0, 5, &mut rng(1)).unwrap();
        for p in &pts {
            assert_eq!(p, &center);
        }
        let pts = sample_ball(&center, 2.5, 200, &mut rng(2)).unwrap();
        for p in &pts {
            assert!(p.l2_distance(&center).unwrap() <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn ball_mean_square_radius_matches_uniform_moment() {
        // E[r^2] = delta^2 * d / (d + 2); for d = 2 that is delta^2 / 2.
        // Cross-checked against a rejection-sampling oracle.
        let d = 2;
        let delta = 1.7;
        let n = 100_000;
        let center = Tensor::<f64>::zeros(&[d]);
        let mut r = rng(3);
        let mut acc = 0.0;
        for p in sample_ball(&center, delta, n, &mut r).unwrap() {
            let rad = p.l2_norm();
            acc += rad * rad;
        }
        let mean = acc / n as f64;
        let expect = delta * delta / 2.0;
        assert!(
            (mean - expect).abs() < 0.02 * expect,
            "mean r^2 {mean} vs {expect}"
        );

        // rejection-sampling oracle for the same moment
        let mut oracle_acc = 0.0;
        let mut count = 0usize;
        while count < n {
            let x = r.random_range(-delta..delta);
            let y = r.random_range(-delta..delta);
            let r2 = x * x + y * y;
            if r2 <= delta * delta {
                oracle_acc += r2;
                count += 1;
            }
        }
        let oracle_mean = oracle_acc / n as f64;
        assert!(
            (mean - oracle_mean).abs() < 0.02 * expect,
            "sampler {mean} vs rejection oracle {oracle_mean}"
        );
    }

    #[test]
    fn label_recovery_is_exact_on_clean_gradients() {
        let mut r = rng(17);
        for trial in 0..100 {
            let (spec, state) = small_net(trial);
            let x = Tensor::vector((0..6).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let y = r.random_range(0..3);
            let released = released_for(&spec, &state, &DefenseMechanism::None, &x, y, trial);
            let rec = recover_label(&released).unwrap();
            assert_eq!(rec.label, y, "trial {trial}");
            assert!(!rec.is_ambiguous());
        }
    }

    #[test]
    fn two_class_bias_gradient_argmin_is_label() {
        let (spec, state) = {
            let spec = NetworkSpec::new(vec![4, 3, 2], 8).unwrap();
            let state = init_parameters::<f64>(&spec);
            (spec, state)
        };
        let x = Tensor::vector(vec![0.2, -0.4, 0.8, 0.1]).unwrap();
        let released = released_for(&spec, &state, &DefenseMechanism::None, &x, 0, 0);
        // bias grad = [p0 - 1, p1]: argmin must be class 0
        let rec = recover_label(&released).unwrap();
        assert_eq!(rec.label, 0);
        assert_eq!(rec.negative_count, 1);
    }

    #[test]
    fn bayes_gaussian_gradient_is_scaled_l2_gradient() {
        let (spec, state) = small_net(21);
        let x = Tensor::vector(vec![0.3, -0.5, 0.8, 0.0, 0.4, -0.9]).unwrap();
        let sigma = 0.17;
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma },
            &x,
            1,
            5,
        );
        let probe = Tensor::vector(vec![0.1, 0.2, -0.3, 0.5, -0.1, 0.7]).unwrap();
        let bayes = AttackConfig::basic(Conditional::bayes(), 1, 0.1, 0);
        let l2 = AttackConfig::basic(Conditional::L2, 1, 0.1, 0);
        let (_, g_bayes) =
            objective_and_gradient(&bayes, &probe, &released, &spec, &state, 1).unwrap();
        let (_, g_l2) = objective_and_gradient(&l2, &probe, &released, &spec, &state, 1).unwrap();
        let ratio = 1.0 / (2.0 * sigma * sigma);
        for (b, l) in g_bayes.data().iter().zip(g_l2.data()) {
            assert!(
                (b - ratio * l).abs() <= 1e-10 * b.abs().max(1e-12),
                "bayes {b} vs scaled l2 {}",
                ratio * l
            );
        }
    }

    #[test]
    fn bayes_laplacian_gradient_is_scaled_l1_gradient() {
        let (spec, state) = small_net(22);
        let x = Tensor::vector(vec![0.3, -0.5, 0.8, 0.0, 0.4, -0.9]).unwrap();
        let b = 0.23;
        let released = released_for(&spec, &state, &DefenseMechanism::Laplacian { b }, &x, 2, 6);
        let probe = Tensor::vector(vec![-0.4, 0.2, 0.9, 0.35, -0.6, 0.05]).unwrap();
        let bayes = AttackConfig::basic(Conditional::bayes(), 1, 0.1, 0);
        let l1 = AttackConfig::basic(Conditional::L1, 1, 0.1, 0);
        let (_, g_bayes) =
            objective_and_gradient(&bayes, &probe, &released, &spec, &state, 2).unwrap();
        let (_, g_l1) = objective_and_gradient(&l1, &probe, &released, &spec, &state, 2).unwrap();
        let ratio = 1.0 / b;
        for (gb, gl) in g_bayes.data().iter().zip(g_l1.data()) {
            assert!(
                (gb - ratio * gl).abs() <= 1e-10 * gb.abs().max(1e-12),
                "bayes {gb} vs scaled l1 {}",
                ratio * gl
            );
        }
    }

    #[test]
    fn objective_trivial_values_at_truth() {
        let (spec, state) = small_net(30);
        let x = Tensor::vector(vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3]).unwrap();
        let released = released_for(&spec, &state, &DefenseMechanism::None, &x, 0, 0);
        // l2 term at the true input on a clean gradient is exactly 0
        let l2 = AttackConfig::basic(Conditional::L2, 1, 0.1, 0);
        let (v, _) = objective_and_gradient(&l2, &x, &released, &spec, &state, 0).unwrap();
        assert_eq!(v, 0.0);
        // cosine of identical gradients is 1
        let cos = AttackConfig::basic(Conditional::Cosine, 1, 0.1, 0);
        let (v, _) = objective_and_gradient(&cos, &x, &released, &spec, &state, 0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bayes_on_none_defense_is_rejected() {
        let (spec, state) = small_net(31);
        let x = Tensor::vector(vec![0.5; 6]).unwrap();
        let released = released_for(&spec, &state, &DefenseMechanism::None, &x, 0, 0);
        let cfg = AttackConfig::basic(Conditional::bayes(), 5, 0.1, 0);
        assert!(matches!(
            run_attack(&cfg, &released, &spec, &state, None),
            Err(Error::DegenerateConditional { .. })
        ));
    }

    #[test]
    fn near_noiseless_bayes_attack_recovers_input() {
        // sigma -> 1e-6 pins the gradient, the optimum is the true input.
        let spec = NetworkSpec::new(vec![20, 12, 5], 3).unwrap();
        let state = init_parameters::<f64>(&spec);
        let mut r = rng(40);
        let x = Tensor::vector((0..20).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 1e-6 },
            &x,
            3,
            9,
        );
        let mut cfg = AttackConfig::basic(Conditional::bayes(), 1000, 0.05, 7);
        cfg.lr_decay = 0.997;
        let result = run_attack(&cfg, &released, &spec, &state, Some(&x)).unwrap();
        let dist = result.x_hat.l2_distance(&x).unwrap();
        assert!(dist < 0.05, "final distance {dist}");

        // cross-check against the analytic inversion oracle
        let inv = crate::analytic::invert_released(&released).unwrap();
        let dist_analytic = result.x_hat.l2_distance(&inv.x).unwrap();
        assert!(dist_analytic < 0.06, "vs analytic {dist_analytic}");
    }

    #[test]
    fn dlg_reduction_matches_reference_loop() {
        // k = 1, delta = 0, l2 conditional, uniform prior, plain ascent:
        // iterates must match a hand-rolled gradient-matching loop.
        let (spec, state) = small_net(50);
        let x = Tensor::vector(vec![0.4, -0.1, 0.8, -0.6, 0.2, 0.5]).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.05 },
            &x,
            1,
            11,
        );
        let init: Vec<f64> = vec![0.1, 0.0, -0.2, 0.3, 0.05, -0.4];
        let steps = 25;
        let lr = 0.02;

        let mut cfg = AttackConfig::basic(Conditional::L2, steps, lr, 0);
        cfg.init = AttackInit::Provided {
            values: init.clone(),
        };
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.label = LabelStrategy::Known { y: 1 };
        let result = run_attack(&cfg, &released, &spec, &state, None).unwrap();

        // reference: plain ascent on -||g - grad_theta(loss(x'))||^2
        let mut cur = Tensor::vector(init).unwrap();
        for _ in 0..steps {
            let mut g = Graph::<f64>::new();
            let xv = g.leaf(cur.clone());
            let theta = g.leaf(state.theta.clone());
            let loss = models::loss_traced(&mut g, &spec, theta, xv, 1).unwrap();
            let inner = g.grad(loss, &[theta]).unwrap()[0];
            let obs = g.constant(released.g.clone());
            let r = g.sub(obs, inner).unwrap();
            let ssq = g.sum_sq(r).unwrap();
            let obj = g.neg(ssq).unwrap();
            let dx = g.grad(obj, &[xv]).unwrap()[0];
            let step = g.value(dx).scale(lr);
            cur = cur.add(&step).unwrap();
        }
        for (a, b) in result.x_hat.data().iter().zip(cur.data()) {
            assert!(
                (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                "iterate drifted: {a} vs {b}"
            );
        }
    }

    #[test]
    fn seeded_runs_are_bit_reproducible() {
        let (spec, state) = small_net(60);
        let x = Tensor::vector(vec![0.4, -0.1, 0.8, -0.6, 0.2, 0.5]).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.1 },
            &x,
            2,
            13,
        );
        let mut cfg = AttackConfig::basic(Conditional::bayes(), 30, 0.05, 99);
        cfg.k = 4;
        cfg.delta = 0.5;
        let a = run_attack(&cfg, &released, &spec, &state, Some(&x)).unwrap();
        let b = run_attack(&cfg, &released, &spec, &state, Some(&x)).unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.distance_trace, b.distance_trace);
    }

    #[test]
    fn mc_estimator_variance_is_non_increasing_in_k() {
        let (spec, state) = small_net(70);
        let x = Tensor::vector(vec![0.4, -0.1, 0.8, -0.6, 0.2, 0.5]).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.1 },
            &x,
            0,
            17,
        );
        let probe = Tensor::vector(vec![0.1, 0.3, -0.2, 0.0, 0.5, -0.3]).unwrap();
        let resamples = 1000;
        let mut variances = Vec::new();
        for k in [1usize, 4, 16] {
            let mut cfg = AttackConfig::basic(Conditional::bayes(), 1, 0.1, 0);
            cfg.k = k;
            cfg.delta = 0.4;
            let mut r = rng(23);
            let vals: Vec<f64> = (0..resamples)
                .map(|_| {
                    ball_objective_value(&cfg, &probe, &released, &spec, &state, 0, &mut r).unwrap()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            variances.push(var);
        }
        assert!(
            variances[0] >= variances[1] && variances[1] >= variances[2],
            "variances not non-increasing: {variances:?}"
        );
    }

    #[test]
    fn objective_mostly_ascends_with_small_lr() {
        let (spec, state) = small_net(80);
        let x = Tensor::vector(vec![0.4, -0.1, 0.8, -0.6, 0.2, 0.5]).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.1 },
            &x,
            1,
            19,
        );
        let mut cfg = AttackConfig::basic(Conditional::bayes(), 200, 1e-3, 5);
        cfg.label = LabelStrategy::Known { y: 1 };
        let result = run_attack(&cfg, &released, &spec, &state, None).unwrap();
        let ups = result
            .objective_trace
            .windows(2)
            .filter(|w| w[1] >= w[0])
            .count();
        let frac = ups as f64 / (result.objective_trace.len() - 1) as f64;
        assert!(frac >= 0.95, "only {frac} of steps ascended");
    }

    #[test]
    fn layer_mask_validation() {
        let (spec, state) = small_net(90);
        let x = Tensor::vector(vec![0.5; 6]).unwrap();
        let released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.1 },
            &x,
            0,
            0,
        );
        // mask on a layer with no parameters
        let mut cfg = AttackConfig::basic(Conditional::L2, 5, 0.1, 0);
        cfg.layer_mask = BTreeSet::from([7]);
        assert!(run_attack(&cfg, &released, &spec, &state, None).is_err());
        // mask covering all layers
        cfg.layer_mask = BTreeSet::from([0, 1]);
        assert!(run_attack(&cfg, &released, &spec, &state, None).is_err());
    }

    #[test]
    fn ambiguous_recovery_falls_back_to_joint_label_optimization() {
        let (spec, state) = small_net(95);
        let x = Tensor::vector(vec![0.4, -0.1, 0.8, -0.6, 0.2, 0.5]).unwrap();
        let mut released = released_for(
            &spec,
            &state,
            &DefenseMechanism::Gaussian { sigma: 0.01 },
            &x,
            2,
            29,
        );
        // corrupt a second last-layer bias coordinate so recovery reports
        // two negatives (ambiguous) and the soft path engages
        let seg = *released
            .segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Bias)
            .max_by_key(|s| s.layer)
            .unwrap();
        let flip = (0..seg.len)
            .find(|&i| i != 2 && released.g.data()[seg.offset + i] > 0.0)
            .unwrap();
        released.g.data_mut()[seg.offset + flip] = -0.5;
        let rec = recover_label(&released).unwrap();
        assert!(rec.is_ambiguous());

        let mut cfg = AttackConfig::basic(Conditional::bayes(), 150, 0.05, 3);
        cfg.label = LabelStrategy::RecoverOrJoint;
        let result = run_attack(&cfg, &released, &spec, &state, Some(&x)).unwrap();
        assert!(result.label_used < spec.class_count());
        assert_eq!(result.steps_run, 150);
    }

    #[test]
    fn config_serde_round_trip_rejects_unknown_fields() {
        let cfg = AttackConfig::basic(Conditional::bayes(), 100, 0.1, 1);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AttackConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        let bad = json.replace("\"steps\":100", "\"steps\":100,\"stepz\":5");
        assert!(serde_json::from_str::<AttackConfig>(&bad).is_err());
    }
}
