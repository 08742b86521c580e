//! Reverse-mode automatic differentiation over an append-only trace.
//!
//! A [`Graph`] records primitive operations eagerly: appending an op computes
//! and caches its forward value. [`Graph::grad`] walks the trace backwards and
//! *appends the adjoint computation as new primitive ops*, so gradients are
//! themselves traceable values. Differentiating an expression that contains
//! gradient outputs therefore yields exact higher-order derivatives — in
//! particular d/dx of a function of d(loss)/d(theta), which every
//! optimization-based reconstruction attack here needs.
//!
//! Subgradient conventions at kinks: `relu'(0) = 0`, `sign(0) = 0`, and the
//! backward of `sqrt` at exactly 0 contributes 0 (finite-difference checks
//! avoid these points).

use crate::error::{Error, Result};
use crate::num::Real;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Matmul(Var, Var),
    MatVec(Var, Var),
    Outer(Var, Var),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
    Slice(Var, usize, usize),
    Pad(Var, usize, usize),
    Index(Var, usize),
    Scatter(Var, usize, usize),
    Sum(Var),
    Broadcast(Var, Vec<usize>),
    Relu(Var),
    StepMask(Var),
    Sign(Var),
    Abs(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Clip(Var, T, T),
    ClipMask(Var, T, T),
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Append-only operation trace with cached forward values.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            // Per-op finiteness checks follow the build's debug setting.
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    /// Scalar value of a node.
    pub fn scalar_value(&self, v: Var) -> Result<T> {
        self.nodes[v.id].value.as_scalar()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.id < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode {
                id: v.id,
                len: self.nodes.len(),
            })
        }
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let value = eval_op(&op, &|v: Var| &self.nodes[v.id].value)?;
        if self.check_finite {
            value.check_finite("trace op")?;
        }
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        Ok(Var { id })
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var { id }
    }

    /// Fixed value; structurally identical to a leaf but named for intent.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    // ── primitives ──────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.push(Op::AddScalar(a, c))
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Matmul(a, b))
    }

    /// `[m,k] x [k] -> [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.push(Op::MatVec(a, x))
    }

    /// `[m] x [n] -> [m,n]`, `out[i,j] = u[i] v[j]`
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        self.push(Op::Outer(u, v))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Reshape(a, shape))
    }

    /// Contiguous sub-vector of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice(a, offset, len))
    }

    /// Embeds a rank-1 tensor into a zero vector of length `total` at `offset`.
    pub fn pad(&mut self, a: Var, offset: usize, total: usize) -> Result<Var> {
        self.push(Op::Pad(a, offset, total))
    }

    /// Scalar element of a rank-1 tensor.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        self.push(Op::Index(a, i))
    }

    /// Scalar scattered into a zero vector of length `n` at position `i`.
    pub fn scatter(&mut self, s: Var, i: usize, n: usize) -> Result<Var> {
        self.push(Op::Scatter(s, i, n))
    }

    /// Sum of all entries; result is a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Fills `shape` with a scalar.
    pub fn broadcast(&mut self, s: Var, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Broadcast(s, shape))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// 1 where the input is strictly positive, else 0. Derivative is 0 a.e.
    pub fn step_mask(&mut self, a: Var) -> Result<Var> {
        self.push(Op::StepMask(a))
    }

    /// -1/0/+1 by sign. Derivative is 0 a.e.
    pub fn sign(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sign(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a))
    }

    pub fn clip(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.push(Op::Clip(a, lo, hi))
    }

    /// 1 where `lo <= a <= hi`, else 0. Derivative is 0 a.e.
    pub fn clip_mask(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.push(Op::ClipMask(a, lo, hi))
    }

    // ── composites ──────────────────────────────────────────────────

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// `sum(a * a)`
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let p = self.mul(a, a)?;
        self.sum(p)
    }

    /// `sum(|a|)`
    pub fn sum_abs(&mut self, a: Var) -> Result<Var> {
        let p = self.abs(a)?;
        self.sum(p)
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.sum_sq(a)?;
        self.sqrt(s)
    }

    /// Elementwise minimum of two scalars: `a - relu(a - b)`.
    pub fn min_scalar(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let r = self.relu(d)?;
        self.sub(a, r)
    }

    /// Numerically stable `log(sum(exp(z)))`. The max is read off the cached
    /// forward value and folded in as a constant; the derivative is still the
    /// exact softmax.
    pub fn logsumexp(&mut self, z: Var) -> Result<Var> {
        let m = self
            .value(z)
            .data()
            .iter()
            .fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let shifted = self.add_scalar(z, -m)?;
        let e = self.exp(shifted)?;
        let s = self.sum(e)?;
        let l = self.log(s)?;
        self.add_scalar(l, m)
    }

    /// `exp(z - logsumexp(z))`
    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let lse = self.logsumexp(z)?;
        let shape = self.value(z).shape().to_vec();
        let b = self.broadcast(lse, shape)?;
        let shifted = self.sub(z, b)?;
        self.exp(shifted)
    }

    // ── differentiation ─────────────────────────────────────────────

    /// Gradient of scalar `y` with respect to each leaf in `wrt`.
    ///
    /// The adjoint computation is appended to this graph as ordinary
    /// primitive ops, so the returned vars can be differentiated again.
    /// Leaves that do not influence `y` get a zero gradient of their shape.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check(y)?;
        if !self.nodes[y.id].value.is_scalar() {
            return Err(Error::NotScalar {
                shape: self.nodes[y.id].value.shape().to_vec(),
            });
        }
        for &w in wrt {
            self.check(w)?;
            if !matches!(self.nodes[w.id].op, Op::Leaf) {
                return Err(Error::NotALeaf { id: w.id });
            }
        }

        let horizon = y.id + 1;
        let mut adj: Vec<Option<Var>> = vec![None; horizon];
        adj[y.id] = Some(self.scalar(T::one()));

        // Append order is topological, so a reverse index sweep visits every
        // node after all of its consumers. Nodes appended by the sweep itself
        // have ids >= horizon and are never revisited.
        for id in (0..horizon).rev() {
            let Some(gbar) = adj[id] else { continue };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(&mut adj, a, gbar)?;
                    self.accum(&mut adj, b, gbar)?;
                }
                Op::Sub(a, b) => {
                    self.accum(&mut adj, a, gbar)?;
                    let nb = self.neg(gbar)?;
                    self.accum(&mut adj, b, nb)?;
                }
                Op::Mul(a, b) => {
                    let da = self.mul(gbar, b)?;
                    self.accum(&mut adj, a, da)?;
                    let db = self.mul(gbar, a)?;
                    self.accum(&mut adj, b, db)?;
                }
                Op::Div(a, b) => {
                    let da = self.div(gbar, b)?;
                    self.accum(&mut adj, a, da)?;
                    let bb = self.mul(b, b)?;
                    let num = self.mul(gbar, a)?;
                    let q = self.div(num, bb)?;
                    let db = self.neg(q)?;
                    self.accum(&mut adj, b, db)?;
                }
                Op::Neg(a) => {
                    let da = self.neg(gbar)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Scale(a, c) => {
                    let da = self.scale(gbar, c)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::AddScalar(a, _) => {
                    self.accum(&mut adj, a, gbar)?;
                }
                Op::Matmul(a, b) => {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(gbar, bt)?;
                    self.accum(&mut adj, a, da)?;
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, gbar)?;
                    self.accum(&mut adj, b, db)?;
                }
                Op::MatVec(a, x) => {
                    let da = self.outer(gbar, x)?;
                    self.accum(&mut adj, a, da)?;
                    let at = self.transpose(a)?;
                    let dx = self.matvec(at, gbar)?;
                    self.accum(&mut adj, x, dx)?;
                }
                Op::Outer(u, v) => {
                    let du = self.matvec(gbar, v)?;
                    self.accum(&mut adj, u, du)?;
                    let gt = self.transpose(gbar)?;
                    let dv = self.matvec(gt, u)?;
                    self.accum(&mut adj, v, dv)?;
                }
                Op::Transpose(a) => {
                    let da = self.transpose(gbar)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Reshape(a, _) => {
                    let orig = self.nodes[a.id].value.shape().to_vec();
                    let da = self.reshape(gbar, orig)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Slice(a, offset, _) => {
                    let total = self.nodes[a.id].value.numel();
                    let da = self.pad(gbar, offset, total)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Pad(a, offset, _) => {
                    let len = self.nodes[a.id].value.numel();
                    let da = self.slice(gbar, offset, len)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Index(a, i) => {
                    let n = self.nodes[a.id].value.numel();
                    let da = self.scatter(gbar, i, n)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Scatter(s, i, _) => {
                    let ds = self.index(gbar, i)?;
                    self.accum(&mut adj, s, ds)?;
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.id].value.shape().to_vec();
                    let da = self.broadcast(gbar, shape)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Broadcast(s, _) => {
                    let ds = self.sum(gbar)?;
                    self.accum(&mut adj, s, ds)?;
                }
                Op::Relu(a) => {
                    let m = self.step_mask(a)?;
                    let da = self.mul(gbar, m)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::StepMask(_) | Op::Sign(_) | Op::ClipMask(_, _, _) => {
                    // Piecewise-constant outputs; zero derivative a.e.
                }
                Op::Abs(a) => {
                    let s = self.sign(a)?;
                    let da = self.mul(gbar, s)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Log(a) => {
                    let da = self.div(gbar, a)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Exp(a) => {
                    let y_out = Var { id };
                    let da = self.mul(gbar, y_out)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Sqrt(a) => {
                    // g * mask / (2*sqrt(a) + (1 - mask)): contributes
                    // g/(2*sqrt(a)) where a > 0 and exactly 0 at a == 0,
                    // without ever forming inf.
                    let y_out = Var { id };
                    let m = self.step_mask(a)?;
                    let two_y = self.scale(y_out, T::of(2.0))?;
                    let nm = self.neg(m)?;
                    let one_minus_m = self.add_scalar(nm, T::one())?;
                    let denom = self.add(two_y, one_minus_m)?;
                    let num = self.mul(gbar, m)?;
                    let da = self.div(num, denom)?;
                    self.accum(&mut adj, a, da)?;
                }
                Op::Clip(a, lo, hi) => {
                    let m = self.clip_mask(a, lo, hi)?;
                    let da = self.mul(gbar, m)?;
                    self.accum(&mut adj, a, da)?;
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj[w.id] {
                Some(v) => out.push(v),
                None => {
                    let shape = self.nodes[w.id].value.shape().to_vec();
                    let z = self.constant(Tensor::zeros(&shape));
                    out.push(z);
                }
            }
        }
        Ok(out)
    }

    fn accum(&mut self, adj: &mut [Option<Var>], v: Var, contrib: Var) -> Result<()> {
        if v.id >= adj.len() {
            // Contribution to a node created during this sweep; impossible by
            // construction since parents precede children.
            return Err(Error::UnknownNode {
                id: v.id,
                len: adj.len(),
            });
        }
        adj[v.id] = Some(match adj[v.id] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    /// Recomputes every node's value from the leaves, in trace order.
    /// Used to verify that the trace is replayable bit-for-bit.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval_op(op, &|p: Var| &values[p.id])?,
            };
            values.push(v);
        }
        Ok(values)
    }
}

/// Forward semantics of each primitive, shared by the append path and
/// Derivative with respect to `x` of a scalar built *from inner gradients*.
///
/// `build` receives a fresh graph and the `x` leaf; it constructs the outer
/// scalar, typically by tracing an inner loss, calling [`Graph::grad`] on it,
/// and combining the returned gradient vars. Because the backward pass is
/// itself made of traced primitives, differentiating the result once more
/// yields the exact second-order composite rather than an approximation.
///
/// Returns the outer value and `d(outer)/dx`.
pub fn hvp_capable_grad<T: Real>(
    x: &Tensor<T>,
    build: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<(T, Tensor<T>)> {
    if x.numel() == 0 {
        return Err(Error::shape("degenerate zero-element input".to_string()));
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let outer = build(&mut g, xv)?;
    let value = g.scalar_value(outer)?;
    let dx = g.grad(outer, &[xv])?[0];
    Ok((value, g.value(dx).clone()))
}

/// [`Graph::replay`].
fn eval_op<'a, T: Real>(op: &Op<T>, val: &dyn Fn(Var) -> &'a Tensor<T>) -> Result<Tensor<T>> {
    match *op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add(a, b) => val(a).add(val(b)),
        Op::Sub(a, b) => val(a).sub(val(b)),
        Op::Mul(a, b) => elementwise(val(a), val(b), |x, y| x * y),
        Op::Div(a, b) => elementwise(val(a), val(b), |x, y| x / y),
        Op::Neg(a) => Ok(val(a).map(|x| -x)),
        Op::Scale(a, c) => Ok(val(a).map(|x| x * c)),
        Op::AddScalar(a, c) => Ok(val(a).map(|x| x + c)),
        Op::Matmul(a, b) => matmul(val(a), val(b)),
        Op::MatVec(a, x) => matvec(val(a), val(x)),
        Op::Outer(u, v) => outer(val(u), val(v)),
        Op::Transpose(a) => transpose(val(a)),
        Op::Reshape(a, ref shape) => val(a).reshaped(shape.clone()),
        Op::Slice(a, offset, len) => slice(val(a), offset, len),
        Op::Pad(a, offset, total) => pad(val(a), offset, total),
        Op::Index(a, i) => index(val(a), i),
        Op::Scatter(s, i, n) => scatter(val(s), i, n),
        Op::Sum(a) => Ok(Tensor::scalar(
            val(a).data().iter().fold(T::zero(), |acc, &v| acc + v),
        )),
        Op::Broadcast(s, ref shape) => broadcast(val(s), shape),
        Op::Relu(a) => Ok(val(a).map(|x| if x > T::zero() { x } else { T::zero() })),
        Op::StepMask(a) => Ok(val(a).map(|x| if x > T::zero() { T::one() } else { T::zero() })),
        Op::Sign(a) => Ok(val(a).map(|x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })),
        Op::Abs(a) => Ok(val(a).map(|x| x.abs())),
        Op::Log(a) => Ok(val(a).map(|x| x.ln())),
        Op::Exp(a) => Ok(val(a).map(|x| x.exp())),
        Op::Sqrt(a) => Ok(val(a).map(|x| x.sqrt())),
        Op::Clip(a, lo, hi) => Ok(val(a).map(|x| x.max(lo).min(hi))),
        Op::ClipMask(a, lo, hi) => Ok(val(a).map(|x| {
            if x >= lo && x <= hi {
                T::one()
            } else {
                T::zero()
            }
        })),
    }
}

fn elementwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "elementwise op on {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    // Tensor::new re-checks finiteness; acceptable since div can produce inf.
}

fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(Error::shape(format!("matmul {ash:?} x {bsh:?}")));
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.data()[i * k + p];
            for j in 0..n {
                out[i * n + j] += aip * b.data()[p * n + j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

fn matvec<T: Real>(a: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (ash, xsh) = (a.shape(), x.shape());
    if ash.len() != 2 || xsh.len() != 1 || ash[1] != xsh[0] {
        return Err(Error::shape(format!("matvec {ash:?} x {xsh:?}")));
    }
    let (m, k) = (ash[0], ash[1]);
    let mut out = vec![T::zero(); m];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for p in 0..k {
            acc += a.data()[i * k + p] * x.data()[p];
        }
        *slot = acc;
    }
    Tensor::new(vec![m], out)
}

fn outer<T: Real>(u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (ush, vsh) = (u.shape(), v.shape());
    if ush.len() != 1 || vsh.len() != 1 {
        return Err(Error::shape(format!("outer {ush:?} x {vsh:?}")));
    }
    let (m, n) = (ush[0], vsh[0]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = u.data()[i] * v.data()[j];
        }
    }
    Tensor::new(vec![m, n], out)
}

fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = a.shape();
    if sh.len() != 2 {
        return Err(Error::shape(format!(
            "transpose of rank-{} tensor",
            sh.len()
        )));
    }
    let (m, n) = (sh[0], sh[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

fn slice<T: Real>(a: &Tensor<T>, offset: usize, len: usize) -> Result<Tensor<T>> {
    if a.shape().len() != 1 || offset + len > a.numel() || len == 0 {
        return Err(Error::shape(format!(
            "slice [{offset}, {offset}+{len}) of {:?}",
            a.shape()
        )));
    }
    Tensor::new(vec![len], a.data()[offset..offset + len].to_vec())
}

fn pad<T: Real>(a: &Tensor<T>, offset: usize, total: usize) -> Result<Tensor<T>> {
    if a.shape().len() != 1 || offset + a.numel() > total {
        return Err(Error::shape(format!(
            "pad {:?} at {offset} into length {total}",
            a.shape()
        )));
    }
    let mut out = vec![T::zero(); total];
    out[offset..offset + a.numel()].copy_from_slice(a.data());
    Tensor::new(vec![total], out)
}

fn index<T: Real>(a: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
    if a.shape().len() != 1 || i >= a.numel() {
        return Err(Error::shape(format!("index {i} of {:?}", a.shape())));
    }
    Ok(Tensor::scalar(a.data()[i]))
}

fn scatter<T: Real>(s: &Tensor<T>, i: usize, n: usize) -> Result<Tensor<T>> {
    if !s.is_scalar() || i >= n {
        return Err(Error::shape(format!(
            "scatter of {:?} at {i} into length {n}",
            s.shape()
        )));
    }
    let mut out = vec![T::zero(); n];
    out[i] = s.data()[0];
    Tensor::new(vec![n], out)
}

fn broadcast<T: Real>(s: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if !s.is_scalar() {
        return Err(Error::shape(format!(
            "broadcast of non-scalar {:?}",
            s.shape()
        )));
    }
    Ok(Tensor::full(shape, s.data()[0]))
}
