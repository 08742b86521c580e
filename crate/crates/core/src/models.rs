//! Small ReLU MLP classifiers with cross-entropy loss.
//!
//! Parameters live in one flat tensor with a per-layer segmentation map, which
//! is what layer-aware defenses and attacks operate on. Batch size is fixed to
//! 1: both the optimization attacks and the analytic first-layer inversion
//! assume single-example gradients.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::Tensor;

/// Layer architecture: `layer_sizes = [n_0, ..., n_L]` means L fully-connected
/// layers; ReLU between layers, none after the last. `n_L` is the class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "layer_sizes needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        Ok(NetworkSpec {
            layer_sizes,
            activation: Activation::Relu,
            seed,
        })
    }

    /// Number of weight/bias layer pairs.
    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        (0..self.layer_count())
            .map(|l| self.layer_sizes[l + 1] * (self.layer_sizes[l] + 1))
            .sum()
    }

    /// Segmentation of the flat parameter vector: weight then bias per layer.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(2 * self.layer_count());
        let mut offset = 0;
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            out.push(Segment {
                layer: l,
                kind: SegmentKind::Weight,
                offset,
                len: n_out * n_in,
                rows: n_out,
                cols: n_in,
            });
            offset += n_out * n_in;
            out.push(Segment {
                layer: l,
                kind: SegmentKind::Bias,
                offset,
                len: n_out,
                rows: n_out,
                cols: 1,
            });
            offset += n_out;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Weight,
    Bias,
}

/// One contiguous piece of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
    /// Weight matrix rows (= layer output width).
    pub rows: usize,
    /// Weight matrix columns (= layer input width); 1 for biases.
    pub cols: usize,
}

/// Flat parameters plus their segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T: Real> {
    pub theta: Tensor<T>,
    pub segments: Vec<Segment>,
}

impl<T: Real> NetworkState<T> {
    pub fn segment_data(&self, seg: &Segment) -> &[T] {
        &self.theta.data()[seg.offset..seg.offset + seg.len]
    }
}

/// A classification example: input vector and class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample<T: Real> {
    pub x: Tensor<T>,
    pub y: usize,
}

/// He-style init: weights uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`
/// (variance 2/fan_in), biases zero. Reproducible from the `NetworkSpec` seed.
pub fn init_parameters<T: Real>(spec: &NetworkSpec) -> NetworkState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let segments = spec.segments();
    let total = spec.param_count();
    let mut data = vec![T::zero(); total];
    for seg in &segments {
        if seg.kind == SegmentKind::Weight {
            let bound = (6.0 / seg.cols as f64).sqrt();
            for slot in &mut data[seg.offset..seg.offset + seg.len] {
                *slot = T::of(rng.random_range(-bound..bound));
            }
        }
    }
    NetworkState {
        theta: Tensor::new(vec![total], data).expect("finite init"),
        segments,
    }
}

/// Traced forward pass: logits of `x` under parameters `theta`.
///
/// Both arguments are graph vars, so the result is differentiable in either.
pub fn forward_traced<T: Real>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    theta: Var,
    x: Var,
) -> Result<Var> {
    if g.value(x).shape() != [spec.input_dim()] {
        return Err(Error::shape(format!(
            "input shape {:?}, network expects [{}]",
            g.value(x).shape(),
            spec.input_dim()
        )));
    }
    if g.value(theta).numel() != spec.param_count() {
        return Err(Error::shape(format!(
            "theta has {} entries, spec needs {}",
            g.value(theta).numel(),
            spec.param_count()
        )));
    }
    let segments = spec.segments();
    let mut h = x;
    for l in 0..spec.layer_count() {
        let w_seg = &segments[2 * l];
        let b_seg = &segments[2 * l + 1];
        let w_flat = g.slice(theta, w_seg.offset, w_seg.len)?;
        let w = g.reshape(w_flat, vec![w_seg.rows, w_seg.cols])?;
        let b = g.slice(theta, b_seg.offset, b_seg.len)?;
        let wx = g.matvec(w, h)?;
        let z = g.add(wx, b)?;
        h = if l + 1 < spec.layer_count() {
            g.relu(z)?
        } else {
            z
        };
    }
    Ok(h)
}

/// Traced softmax cross-entropy of the logits against a hard label:
/// `logsumexp(z) - z[y]`.
pub fn loss_traced<T: Real>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    theta: Var,
    x: Var,
    y: usize,
) -> Result<Var> {
    if y >= spec.class_count() {
        return Err(Error::InvalidConfig(format!(
            "label {y} out of range for {} classes",
            spec.class_count()
        )));
    }
    let logits = forward_traced(g, spec, theta, x)?;
    let lse = g.logsumexp(logits)?;
    let zy = g.index(logits, y)?;
    g.sub(lse, zy)
}

/// Traced cross-entropy against a soft label distribution `q` (a graph var of
/// shape `[classes]`): `sum(q) * logsumexp(z) - q . z`. Used by the joint
/// (x, y) attack fallback where `q` is a softmax over free logits.
pub fn soft_loss_traced<T: Real>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    theta: Var,
    x: Var,
    q: Var,
) -> Result<Var> {
    let logits = forward_traced(g, spec, theta, x)?;
    let lse = g.logsumexp(logits)?;
    let qsum = g.sum(q)?;
    let a = g.mul(qsum, lse)?;
    let qz = g.dot(q, logits)?;
    g.sub(a, qz)
}

/// Plain (untraced) forward evaluation.
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let theta = g.constant(state.theta.clone());
    let xv = g.constant(x.clone());
    let logits = forward_traced(&mut g, spec, theta, xv)?;
    Ok(g.value(logits).clone())
}

/// Cross-entropy loss and the flat parameter gradient for one example.
pub fn loss_and_param_grad<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    example: &LabeledExample<T>,
) -> Result<(T, Tensor<T>)> {
    let mut g = Graph::new();
    let theta = g.leaf(state.theta.clone());
    let x = g.constant(example.x.clone());
    let loss = loss_traced(&mut g, spec, theta, x, example.y)?;
    let grads = g.grad(loss, &[theta])?;
    Ok((g.scalar_value(loss)?, g.value(grads[0]).clone()))
}

/// Plain SGD on a stream of examples, batch size 1. Returns the updated state;
/// aborts if the loss goes non-finite.
pub fn train_steps<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    mut next_example: impl FnMut(usize) -> LabeledExample<T>,
    steps: usize,
    lr: f64,
) -> Result<NetworkState<T>> {
    let mut theta = state.theta.clone();
    for step in 0..steps {
        let example = next_example(step);
        let current = NetworkState {
            theta: theta.clone(),
            segments: state.segments.clone(),
        };
        let (loss, grad) = loss_and_param_grad(spec, &current, &example)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        theta = theta.sub(&grad.scale(T::of(lr)))?;
    }
    Ok(NetworkState {
        theta,
        segments: state.segments.clone(),
    })
}

/// Classification accuracy over a slice of examples.
pub fn accuracy<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    examples: &[LabeledExample<T>],
) -> Result<f64> {
    let mut hits = 0usize;
    for ex in examples {
        let logits = forward(spec, state, &ex.x)?;
        let pred = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == ex.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

// ── checkpoint serialization ────────────────────────────────────────
//
// File layout: one JSON header line, '\n', then the parameters as raw
// little-endian f64 bytes.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    step: u64,
    param_count: usize,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(
    path: &Path,
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    step: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        layer_sizes: spec.layer_sizes.clone(),
        activation: spec.activation,
        seed: spec.seed,
        step,
        param_count: state.theta.numel(),
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    for &v in state.theta.data() {
        file.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(NetworkSpec, NetworkState<T>, u64)> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadFormat("checkpoint missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let spec = NetworkSpec {
        layer_sizes: header.layer_sizes,
        activation: header.activation,
        seed: header.seed,
    };
    let body = &bytes[newline + 1..];
    if body.len() != header.param_count * 8 {
        return Err(Error::BadFormat(format!(
            "checkpoint body has {} bytes, expected {}",
            body.len(),
            header.param_count * 8
        )));
    }
    if header.param_count != spec.param_count() {
        return Err(Error::BadFormat(
            "param_count inconsistent with layer_sizes".into(),
        ));
    }
    let mut data = Vec::with_capacity(header.param_count);
    for chunk in body.chunks_exact(8) {
        data.push(T::of(f64::from_le_bytes(chunk.try_into().unwrap())));
    }
    let state = NetworkState {
        theta: Tensor::new(vec![header.param_count], data)?,
        segments: spec.segments(),
    };
    Ok((spec, state, header.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec(sizes: &[usize], seed: u64) -> NetworkSpec {
        NetworkSpec::new(sizes.to_vec(), seed).unwrap()
    }

    #[test]
    fn segments_partition_theta_exactly() {
        let s = spec(&[5, 7, 3], 0);
        let segs = s.segments();
        let mut offset = 0;
        for seg in &segs {
            assert_eq!(seg.offset, offset, "gap or overlap at {seg:?}");
            offset += seg.len;
        }
        assert_eq!(offset, s.param_count());
    }

    #[test]
    fn identity_one_layer_net_passes_input_through() {
        let s = spec(&[2, 2], 0);
        let mut state = init_parameters::<f64>(&s);
        let segs = s.segments();
        let data = state.theta.data_mut();
        // W = I, b = 0
        data[segs[0].offset] = 1.0;
        data[segs[0].offset + 1] = 0.0;
        data[segs[0].offset + 2] = 0.0;
        data[segs[0].offset + 3] = 1.0;
        data[segs[1].offset] = 0.0;
        data[segs[1].offset + 1] = 0.0;
        let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let logits = forward(&s, &state, &x).unwrap();
        assert_eq!(logits.data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let s = spec(&[3, 4, 2], 0);
        let state = NetworkState {
            theta: Tensor::zeros(&[s.param_count()]),
            segments: s.segments(),
        };
        let x = Tensor::vector(vec![0.5, -0.5, 1.0]).unwrap();
        let logits = forward(&s, &state, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let s = spec(&[3, 2], 0);
        let state = init_parameters::<f64>(&s);
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(forward(&s, &state, &x).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        // Zero parameters -> zero logits -> uniform softmax -> loss = ln C.
        for c in [2usize, 5, 10] {
            let s = spec(&[4, c], 0);
            let state = NetworkState {
                theta: Tensor::zeros(&[s.param_count()]),
                segments: s.segments(),
            };
            let ex = LabeledExample {
                x: Tensor::vector(vec![0.3; 4]).unwrap(),
                y: c - 1,
            };
            let (loss, _) = loss_and_param_grad(&s, &state, &ex).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn last_layer_bias_grad_is_softmax_minus_onehot() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let s = spec(&[6, 5, 4], trial);
            let state = init_parameters::<f64>(&s);
            let x = Tensor::vector((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = rng.random_range(0..4);
            let ex = LabeledExample { x: x.clone(), y };
            let (_, grad) = loss_and_param_grad(&s, &state, &ex).unwrap();

            let logits = forward(&s, &state, &x).unwrap();
            let max = logits.data().iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let bias_seg = *state.segments.last().unwrap();
            for (i, &gb) in grad.data()[bias_seg.offset..bias_seg.offset + bias_seg.len]
                .iter()
                .enumerate()
            {
                let expect = exps[i] / total - if i == y { 1.0 } else { 0.0 };
                assert!(
                    (gb - expect).abs() < 1e-12,
                    "bias grad {gb} vs softmax-onehot {expect}"
                );
            }
        }
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        let s = spec(&[4, 3, 3], 9);
        let state = init_parameters::<f64>(&s);
        let ex = LabeledExample {
            x: Tensor::vector(vec![0.4, -0.2, 0.9, 0.1]).unwrap(),
            y: 1,
        };
        let (_, grad) = loss_and_param_grad(&s, &state, &ex).unwrap();

        let eval = |theta: &[f64]| -> f64 {
            let st = NetworkState {
                theta: Tensor::vector(theta.to_vec()).unwrap(),
                segments: s.segments(),
            };
            let mut g = Graph::new();
            let tv = g.constant(st.theta.clone());
            let xv = g.constant(ex.x.clone());
            let loss = loss_traced(&mut g, &s, tv, xv, ex.y).unwrap();
            g.scalar_value(loss).unwrap()
        };
        let base = state.theta.data().to_vec();
        let step = 1e-5;
        for i in (0..base.len()).step_by(7) {
            let mut t = base.clone();
            t[i] += step;
            let hi = eval(&t);
            t[i] = base[i] - step;
            let lo = eval(&t);
            let fd = (hi - lo) / (2.0 * step);
            let a = grad.data()[i];
            assert!(
                (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3),
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[10, 8, 3], 42);
        let a = init_parameters::<f64>(&s);
        let b = init_parameters::<f64>(&s);
        assert_eq!(a.theta, b.theta);
        for seg in &a.segments {
            if seg.kind == SegmentKind::Bias {
                assert!(a.segment_data(seg).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_weight_variance_tracks_fan_in() {
        let s = spec(&[400, 50, 10], 3);
        let st = init_parameters::<f64>(&s);
        let seg = st.segments[0];
        let w = st.segment_data(&seg);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / seg.cols as f64;
        assert!(
            (var - target).abs() < 0.2 * target,
            "variance {var} vs 2/fan_in {target}"
        );
    }

    #[test]
    fn train_zero_steps_is_identity_and_training_is_deterministic() {
        let s = spec(&[4, 6, 3], 1);
        let st = init_parameters::<f64>(&s);
        let gen = |step: usize| LabeledExample {
            x: Tensor::vector(vec![
                (step as f64 * 0.17).sin(),
                (step as f64 * 0.31).cos(),
                0.5,
                -0.25,
            ])
            .unwrap(),
            y: step % 3,
        };
        let same = train_steps(&s, &st, gen, 0, 0.1).unwrap();
        assert_eq!(same.theta, st.theta);

        let a = train_steps(&s, &st, gen, 25, 0.1).unwrap();
        let b = train_steps(&s, &st, gen, 25, 0.1).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn training_fits_linearly_separable_data() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let dim = 6;
        let examples: Vec<LabeledExample<f64>> = (0..60)
            .map(|_| {
                let y = rng.random_range(0..2usize);
                let shift = if y == 0 { -1.5 } else { 1.5 };
                let x: Vec<f64> = (0..dim)
                    .map(|_| rng.random_range(-0.5..0.5) + shift)
                    .collect();
                LabeledExample {
                    x: Tensor::vector(x).unwrap(),
                    y,
                }
            })
            .collect();
        let s = spec(&[dim, 8, 2], 4);
        let st = init_parameters::<f64>(&s);
        let pool = examples.clone();
        let trained = train_steps(&s, &st, |i| pool[i % pool.len()].clone(), 500, 0.05).unwrap();
        let acc = accuracy(&s, &trained, &examples).unwrap();
        assert!(acc > 0.9, "training accuracy {acc}");
    }

    #[test]
    fn forward_is_replayable_bit_for_bit() {
        let s = spec(&[5, 4, 3], 7);
        let state = init_parameters::<f64>(&s);
        let x = Tensor::vector(vec![0.2, -0.4, 0.6, -0.8, 1.0]).unwrap();
        let mut g = Graph::new();
        let tv = g.constant(state.theta.clone());
        let xv = g.constant(x);
        let logits = forward_traced(&mut g, &s, tv, xv).unwrap();
        let replayed = g.replay().unwrap();
        assert_eq!(&replayed[logits.id()], g.value(logits));
    }

    #[test]
    fn segmentation_reshape_round_trip() {
        let s = spec(&[5, 4, 3], 7);
        let state = init_parameters::<f64>(&s);
        let mut rebuilt = vec![0.0; s.param_count()];
        for seg in &state.segments {
            let chunk = state.segment_data(seg);
            let mat = Tensor::vector(chunk.to_vec())
                .unwrap()
                .reshaped(vec![seg.rows, seg.cols])
                .unwrap();
            let flat = mat.reshaped(vec![seg.len]).unwrap();
            rebuilt[seg.offset..seg.offset + seg.len].copy_from_slice(flat.data());
        }
        assert_eq!(rebuilt, state.theta.data());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(30))]

        /// The softmax-cross-entropy identity grad_b_last = softmax - onehot
        /// holds exactly for arbitrary states and examples.
        #[test]
        fn bias_gradient_identity_holds_for_random_pairs(
            seed in 0u64..10_000,
            y in 0usize..4,
            xs in proptest::collection::vec(-2.0f64..2.0, 5),
        ) {
            let s = NetworkSpec::new(vec![5, 6, 4], seed).unwrap();
            let state = init_parameters::<f64>(&s);
            let x = Tensor::vector(xs).unwrap();
            let (_, grad) = loss_and_param_grad(&s, &state, &LabeledExample { x: x.clone(), y }).unwrap();
            let logits = forward(&s, &state, &x).unwrap();
            let max = logits.data().iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let seg = *state.segments.last().unwrap();
            for (i, &gb) in grad.data()[seg.offset..seg.offset + seg.len].iter().enumerate() {
                let expect = exps[i] / total - if i == y { 1.0 } else { 0.0 };
                proptest::prop_assert!((gb - expect).abs() < 1e-12);
            }
        }

        /// Per-layer reshape and re-flattening of theta is the identity.
        #[test]
        fn segmentation_round_trip_random_sizes(
            d in 1usize..9, h in 1usize..9, c in 2usize..6, seed in 0u64..1000,
        ) {
            let s = NetworkSpec::new(vec![d, h, c], seed).unwrap();
            let state = init_parameters::<f64>(&s);
            let mut rebuilt = vec![0.0; s.param_count()];
            for seg in &state.segments {
                let mat = Tensor::vector(state.segment_data(seg).to_vec())
                    .unwrap()
                    .reshaped(vec![seg.rows, seg.cols])
                    .unwrap();
                let flat = mat.reshaped(vec![seg.len]).unwrap();
                rebuilt[seg.offset..seg.offset + seg.len].copy_from_slice(flat.data());
            }
            proptest::prop_assert_eq!(rebuilt, state.theta.data().to_vec());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("leaklab-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        let s = spec(&[6, 5, 4], 99);
        let state = init_parameters::<f64>(&s);
        save_checkpoint(&path, &s, &state, 123).unwrap();
        let (s2, state2, step) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(s, s2);
        assert_eq!(step, 123);
        assert_eq!(state.theta, state2.theta);
        std::fs::remove_file(&path).unwrap();
    }
}
