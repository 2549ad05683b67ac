//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as it executes. Nodes are appended in
//! execution order, so replaying adjoints from the last node backwards is a
//! valid reverse topological order. Shape mismatches are programming errors
//! and panic with both shapes in the message.

use std::fmt;

use rustfft::num_complex::Complex;

use crate::broadcast;
use crate::channels::scan::{self, ScanDims};
use crate::fft::RealFft;
use crate::tensor::{axis_extents, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sign,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, T),
    Offset(Var),
    MatMul(Var, Var),
    Unary(Unary, Var),
    Pow(Var, Var),
    Softmax(Var, usize),
    Cumsum(Var, usize),
    SumAxis(Var, usize),
    SumAll(Var),
    MaxAxis(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    PhaseRamp(Var, Var, usize),
    DepthwiseConv(Var, Var, usize),
    Frames(Var, usize, usize),
    AxisLinear(Var, Tensor<T>, usize),
    Scan(Var, Var),
    Epm(Var, Vec<T>),
    CrossEntropy(Var, Vec<usize>, Vec<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Binary(Binary::Div, ..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Unary(..) => "unary",
            Op::Pow(..) => "pow",
            Op::Softmax(..) => "softmax",
            Op::Cumsum(..) => "cumsum",
            Op::SumAxis(..) => "sum_axis",
            Op::SumAll(..) => "sum_all",
            Op::MaxAxis(..) => "max_axis",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::Gather(..) => "gather",
            Op::PhaseRamp(..) => "phase_ramp",
            Op::DepthwiseConv(..) => "depthwise_conv1d",
            Op::Frames(..) => "frames",
            Op::AxisLinear(..) => "axis_linear",
            Op::Scan(..) => "linear_scan",
            Op::Epm(..) => "epm",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Values cut out of gradient flow, in the order they were produced.
///
/// Finite-difference checks replay a recorded set so that perturbed
/// evaluations see the same stop-gradient constants as the tape did.
#[derive(Clone, Debug, Default)]
pub struct StopGradLog<T> {
    pub values: Vec<Vec<T>>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    scan_chunk: usize,
    nonfinite: usize,
    strict_finite: bool,
    stop_log: StopGradLog<T>,
    replay: Option<(StopGradLog<T>, usize)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("nonfinite", &self.nonfinite)
            .finish()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("{op}: shape mismatch between {a:?} and {b:?}")
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn signum0<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            scan_chunk: scan::DEFAULT_CHUNK,
            nonfinite: 0,
            strict_finite: cfg!(debug_assertions),
            stop_log: StopGradLog::default(),
            replay: None,
        }
    }

    /// Replays recorded stop-gradient values instead of recomputing them.
    pub fn with_frozen_stop_grads(log: StopGradLog<T>) -> Self {
        let mut g = Self::new();
        g.replay = Some((log, 0));
        g
    }

    pub fn set_scan_chunk(&mut self, chunk: usize) {
        assert!(chunk > 0, "scan chunk must be positive");
        self.scan_chunk = chunk;
    }

    /// Whether a non-finite forward value panics (the default in debug
    /// builds) or is only counted. Training turns this off to report
    /// divergence as an error instead.
    pub fn set_strict_finite(&mut self, strict: bool) {
        self.strict_finite = strict;
    }

    pub fn stop_grad_log(&self) -> &StopGradLog<T> {
        &self.stop_log
    }

    /// Number of ops whose forward output contained NaN/Inf when not in
    /// strict mode.
    pub fn nonfinite_count(&self) -> usize {
        self.nonfinite
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by forward values on the tape.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel() * T::BYTES).sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(self.shape(v), g.clone()))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if !value.is_finite() {
            if self.strict_finite {
                panic!(
                    "{}: non-finite value in forward output of shape {:?}",
                    op.name(),
                    value.shape()
                );
            }
            self.nonfinite += 1;
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Learnable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn stop_grad_value(&mut self, computed: Vec<T>) -> Vec<T> {
        let value = match &mut self.replay {
            Some((log, cursor)) => {
                let v = log.values[*cursor].clone();
                assert_eq!(v.len(), computed.len(), "stop-gradient replay out of sync");
                *cursor += 1;
                v
            }
            None => computed,
        };
        self.stop_log.values.push(value.clone());
        value
    }

    /// Same values, no gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        let shape = value.shape().to_vec();
        let data = self.stop_grad_value(value.into_data());
        self.constant(Tensor::new(&shape, data))
    }

    // ---- elementwise binary (broadcasting) ----

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast::broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| shape_err(Op::<T>::Binary(kind, a, b).name(), &sa, &sb));
        let numel: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); numel];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            let f: fn(T, T) -> T = match kind {
                Binary::Add => |x, y| x + y,
                Binary::Sub => |x, y| x - y,
                Binary::Mul => |x, y| x * y,
                Binary::Div => |x, y| x / y,
            };
            broadcast::for_each(&out_shape, &sa, &sb, |o, i, j| out[o] = f(da[i], db[j]));
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&out_shape, out), Op::Binary(kind, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Offset(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    // ---- unary ----

    pub fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => |v| v.tanh(),
            Unary::Sin => |v| v.sin(),
            Unary::Cos => |v| v.cos(),
            Unary::Exp => |v| v.exp(),
            Unary::Log => |v| v.ln(),
            Unary::Abs => |v| v.abs(),
            Unary::Sign => signum0,
            Unary::Softplus => softplus,
        };
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]) && kind != Unary::Sign;
        self.push(value, Op::Unary(kind, x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(Unary::Sin, x)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(Unary::Cos, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Unary::Log, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    pub fn sign(&mut self, x: Var) -> Var {
        self.unary(Unary::Sign, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    /// `x^e` for `x ≥ 0` with a single-element exponent. The derivative in
    /// `x` is taken as 0 at `x = 0`.
    pub fn pow(&mut self, x: Var, exponent: Var) -> Var {
        assert_eq!(
            self.value(exponent).numel(),
            1,
            "pow: exponent must have one element, got shape {:?}",
            self.shape(exponent)
        );
        let e = self.value(exponent).data()[0];
        let value = self.value(x).map(|v| {
            debug_assert!(v >= T::zero(), "pow: negative base {v}");
            if v == T::zero() {
                T::zero()
            } else {
                v.powf(e)
            }
        });
        let rg = self.rg(&[x, exponent]);
        self.push(value, Op::Pow(x, exponent), rg)
    }

    // ---- linear algebra ----

    /// `x[..., k] @ w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            shape_err("matmul", &sx, &sw);
        }
        let (k, n) = (sw[0], sw[1]);
        let rows = self.value(x).numel() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            k,
            n,
            self.value(x).data(),
            k as isize,
            1,
            self.value(w).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
        );
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[x, w]);
        self.push(Tensor::new(&shape, out), Op::MatMul(x, w), rg)
    }

    // ---- reductions & scans ----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| (o * n + t) * inner + i;
                let m = (0..n).map(|t| src[at(t)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for t in 0..n {
                    let e = (src[at(t)] - m).exp();
                    out[at(t)] = e;
                    z += e;
                }
                for t in 0..n {
                    out[at(t)] = out[at(t)] / z;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&shape, out), Op::Softmax(x, axis), rg)
    }

    pub fn cumsum(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for t in 1..n {
                for i in 0..inner {
                    let prev = out[(o * n + t - 1) * inner + i];
                    out[(o * n + t) * inner + i] += prev;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&shape, out), Op::Cumsum(x, axis), rg)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..n {
                let row = &src[(o * n + t) * inner..(o * n + t + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&out_shape, out), Op::SumAxis(x, axis), rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let n = self.shape(x)[axis];
        let s = self.sum_axis(x, axis);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Maximum over `axis`, keeping it with extent 1. Ties resolve to the
    /// first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        assert!(n > 0, "max_axis: empty axis {axis} in {shape:?}");
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for t in 1..n {
                    if src[(o * n + t) * inner + i] > src[(o * n + best) * inner + i] {
                        best = t;
                    }
                }
                out[o * inner + i] = src[(o * n + best) * inner + i];
                arg[o * inner + i] = (o * n + best) * inner + i;
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&out_shape, out), Op::MaxAxis(x, arg), rg)
    }

    // ---- structural ----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat: no inputs");
        let first = self.shape(xs[0]).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                shape_err("concat", &first, s);
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                let src = self.value(x).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let rg = self.rg(xs);
        self.push(Tensor::new(&shape, out), Op::Concat(xs.to_vec(), axis), rg)
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let reshaped: Vec<Var> = xs
            .iter()
            .map(|&x| {
                let mut s = vec![1];
                s.extend_from_slice(self.shape(x));
                self.reshape(x, &s)
            })
            .collect();
        self.concat(&reshaped, 0)
    }

    /// `x[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(
            start <= end && end <= shape[axis],
            "slice: range {start}..{end} out of bounds for axis {axis} of {shape:?}"
        );
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&out_shape, out), Op::Slice(x, axis, start), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Row lookup: `table[N, d]` indexed by `indices` (shape `index_shape`)
    /// gives `[index_shape..., d]`.
    pub fn gather(&mut self, table: Var, indices: &[usize], index_shape: &[usize]) -> Var {
        let ts = self.shape(table).to_vec();
        assert_eq!(ts.len(), 2, "gather: table must be 2-D, got {ts:?}");
        assert_eq!(
            indices.len(),
            index_shape.iter().product::<usize>(),
            "gather: index count does not match index shape {index_shape:?}"
        );
        let (rows, d) = (ts[0], ts[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < rows, "gather: index {i} out of range for {rows} rows");
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let rg = self.rg(&[table]);
        self.push(
            Tensor::new(&shape, out),
            Op::Gather(table, indices.to_vec()),
            rg,
        )
    }

    // ---- spectral ----

    /// Linear phase ramp in the Fourier domain along `axis`:
    /// `out[r] = irfft(rfft(x) ⊙ e^{-i·k·rates[r]})` for every rate `r`, where
    /// `k` is the bin index. A rate of `2π·m/n` is a circular shift by `m`
    /// samples; fractional rates give band-limited fractional shifts.
    /// Output shape is `[R, x.shape...]`.
    pub fn phase_ramp(&mut self, x: Var, rates: Var, axis: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let rs = self.shape(rates).to_vec();
        assert_eq!(rs.len(), 1, "phase_ramp: rates must be 1-D, got {rs:?}");
        let (outer, n, inner) = axis_extents(&xs, axis);
        let r_count = rs[0];
        let rates_v = self.value(rates).data().to_vec();
        let src = self.value(x).data();
        let lane_total = outer * n * inner;
        let mut out = vec![T::zero(); r_count * lane_total];
        let mut plan = RealFft::<T>::new(n);
        let nb = plan.bins();
        let mut lane = vec![T::zero(); n];
        let mut spec = vec![Complex::new(T::zero(), T::zero()); nb];
        let mut shifted = spec.clone();
        let ramps = ramp_table(&rates_v, nb, T::one());
        for o in 0..outer {
            for i in 0..inner {
                for (t, v) in lane.iter_mut().enumerate() {
                    *v = src[(o * n + t) * inner + i];
                }
                plan.forward(&lane, &mut spec);
                for r in 0..r_count {
                    for k in 0..nb {
                        shifted[k] = spec[k] * ramps[r * nb + k];
                    }
                    plan.inverse(&shifted, &mut lane);
                    for (t, v) in lane.iter().enumerate() {
                        out[r * lane_total + (o * n + t) * inner + i] = *v;
                    }
                }
            }
        }
        let mut shape = vec![r_count];
        shape.extend_from_slice(&xs);
        let rg = self.rg(&[x, rates]);
        self.push(Tensor::new(&shape, out), Op::PhaseRamp(x, rates, axis), rg)
    }

    // ---- convolution & framing ----

    /// Depthwise 1-D convolution over axis 1 of `x[B, L, C]` with
    /// `kernel[T, C]`: `y[t] = Σ_j kernel[j]·x[t - j + offset]`, zero outside
    /// `[0, L)`. `offset = 0` is causal; `offset = (T-1)/2` is centered.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var, offset: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 2 || ks[1] != xs[2] {
            shape_err("depthwise_conv1d", &xs, &ks);
        }
        let (b, l, c) = (xs[0], xs[1], xs[2]);
        let taps = ks[0];
        assert!(
            offset < taps.max(1),
            "depthwise_conv1d: offset {offset} >= taps {taps}"
        );
        let src = self.value(x).data();
        let ker = self.value(kernel).data();
        let mut out = vec![T::zero(); b * l * c];
        for bi in 0..b {
            for t in 0..l {
                let dst = &mut out[(bi * l + t) * c..(bi * l + t + 1) * c];
                for j in 0..taps {
                    let pos = t as isize - j as isize + offset as isize;
                    if pos < 0 || pos >= l as isize {
                        continue;
                    }
                    let row = &src[(bi * l + pos as usize) * c..(bi * l + pos as usize + 1) * c];
                    let kr = &ker[j * c..(j + 1) * c];
                    for ((d, &xv), &kv) in dst.iter_mut().zip(row).zip(kr) {
                        *d += kv * xv;
                    }
                }
            }
        }
        let rg = self.rg(&[x, kernel]);
        self.push(
            Tensor::new(&xs, out),
            Op::DepthwiseConv(x, kernel, offset),
            rg,
        )
    }

    /// Overlapping frames along axis 1: `x[B, L, d] -> [B, L', W, d]` with
    /// `L' = (L - W) / H + 1`.
    pub fn frames(&mut self, x: Var, window: usize, hop: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "frames: expected [B, L, d], got {xs:?}");
        assert!(
            window >= 1 && hop >= 1,
            "frames: window and hop must be positive"
        );
        let (b, l, d) = (xs[0], xs[1], xs[2]);
        assert!(
            l >= window,
            "frames: length {l} shorter than window {window}"
        );
        let count = (l - window) / hop + 1;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * count * window * d);
        for bi in 0..b {
            for f in 0..count {
                let start = (bi * l + f * hop) * d;
                out.extend_from_slice(&src[start..start + window * d]);
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&[b, count, window, d], out),
            Op::Frames(x, window, hop),
            rg,
        )
    }

    /// Applies a fixed `matrix[M, W]` along `axis` (extent `W`), producing
    /// extent `M` there.
    pub fn axis_linear(&mut self, x: Var, matrix: Tensor<T>, axis: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ms = matrix.shape().to_vec();
        if ms.len() != 2 || xs[axis] != ms[1] {
            shape_err("axis_linear", &xs, &ms);
        }
        let (outer, w, inner) = axis_extents(&xs, axis);
        let m = ms[0];
        let src = self.value(x).data();
        let mat = matrix.data();
        let mut out = vec![T::zero(); outer * m * inner];
        for o in 0..outer {
            for mi in 0..m {
                let dst = &mut out[(o * m + mi) * inner..(o * m + mi + 1) * inner];
                for wi in 0..w {
                    let coef = mat[mi * w + wi];
                    let row = &src[(o * w + wi) * inner..(o * w + wi + 1) * inner];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d += coef * v;
                    }
                }
            }
        }
        let mut shape = xs;
        shape[axis] = m;
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&shape, out),
            Op::AxisLinear(x, matrix, axis),
            rg,
        )
    }

    // ---- recurrence, mixing, loss ----

    /// Gated linear recurrence over axis 1 of `[B, L, d]`, evaluated by the
    /// chunked scan and differentiated by its own adjoint.
    pub fn linear_scan(&mut self, gamma: Var, v: Var) -> Var {
        let (sg, sv) = (self.shape(gamma).to_vec(), self.shape(v).to_vec());
        if sg.len() != 3 || sg != sv {
            shape_err("linear_scan", &sg, &sv);
        }
        let dims = ScanDims {
            batch: sg[0],
            len: sg[1],
            width: sg[2],
        };
        let gv = self.value(gamma).data();
        let out = if !self.strict_finite && gv.iter().any(|g| !g.is_finite()) {
            // Poisoned gate: propagate NaN so the caller sees a non-finite loss.
            vec![T::nan(); gv.len()]
        } else {
            scan::chunked(gv, self.value(v).data(), dims, self.scan_chunk)
                .unwrap_or_else(|e| panic!("linear_scan: {e}"))
        };
        let rg = self.rg(&[gamma, v]);
        self.push(Tensor::new(&sg, out), Op::Scan(gamma, v), rg)
    }

    /// Energy-proportional mixing of `stack[K, ..., d]` over its leading axis.
    /// Weights `E_k / (Σ_j E_j + eps)` with `E_k` the mean absolute value over
    /// the last axis are computed per position and carry no gradient.
    pub fn epm(&mut self, stack: Var, eps: T) -> Var {
        let ss = self.shape(stack).to_vec();
        assert!(ss.len() >= 2, "epm: expected [K, ..., d], got {ss:?}");
        let k = ss[0];
        let d = *ss.last().unwrap();
        let per = self.value(stack).numel() / k;
        let positions = per / d;
        let src = self.value(stack).data();
        let mut energy = vec![T::zero(); k * positions];
        let inv_d = T::one() / T::lit(d as f64);
        for ki in 0..k {
            for p in 0..positions {
                let row = &src[ki * per + p * d..ki * per + (p + 1) * d];
                energy[ki * positions + p] = row.iter().map(|v| v.abs()).sum::<T>() * inv_d;
            }
        }
        let mut weights = vec![T::zero(); k * positions];
        for p in 0..positions {
            let total = (0..k).map(|ki| energy[ki * positions + p]).sum::<T>() + eps;
            for ki in 0..k {
                weights[ki * positions + p] = energy[ki * positions + p] / total;
            }
        }
        let weights = self.stop_grad_value(weights);
        let src = self.value(stack).data();
        let mut out = vec![T::zero(); per];
        for ki in 0..k {
            for p in 0..positions {
                let w = weights[ki * positions + p];
                let row = &src[ki * per + p * d..ki * per + (p + 1) * d];
                for (o, &v) in out[p * d..(p + 1) * d].iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        let rg = self.rg(&[stack]);
        self.push(Tensor::new(&ss[1..], out), Op::Epm(stack, weights), rg)
    }

    /// Mean cross-entropy of `logits[B, C]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(
            s.len(),
            2,
            "cross_entropy: logits must be [B, C], got {s:?}"
        );
        let (b, c) = (s[0], s[1]);
        assert_eq!(
            labels.len(),
            b,
            "cross_entropy: {} labels for batch {b}",
            labels.len()
        );
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); b * c];
        let mut loss = T::zero();
        for (bi, &y) in labels.iter().enumerate() {
            assert!(
                y < c,
                "cross_entropy: label {y} out of range for {c} classes"
            );
            let row = &src[bi * c..(bi + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..c {
                probs[bi * c + j] = (row[j] - m).exp() / z;
            }
            loss += z.ln() + m - row[y];
        }
        loss = loss / T::lit(b as f64);
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            rg,
        )
    }

    // ---- backward ----

    /// Reverse pass from a one-element `loss`. Gradients of every node that
    /// requires them are available through [`Graph::grad`] afterwards;
    /// intermediate gradients are released once consumed, leaves keep theirs.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward: loss must have one element, got shape {:?}",
            self.shape(loss)
        );
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
        }
    }

    fn accum(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        // Ops borrow inputs immutably from `nodes` and write into `grads`;
        // the op is moved out temporarily to keep the borrows disjoint.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => self.back_binary(i, *kind, *a, *b, g),
            Op::Scale(x, c) => {
                let c = *c;
                self.accum(*x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * c)
                });
            }
            Op::Offset(x) | Op::Reshape(x) => {
                self.accum(*x, |gx| gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
            }
            Op::MatMul(x, w) => self.back_matmul(*x, *w, g),
            Op::Unary(kind, x) => self.back_unary(i, *kind, *x, g),
            Op::Pow(x, e) => self.back_pow(i, *x, *e, g),
            Op::Softmax(x, axis) => {
                let y = self.nodes[i].value.data().to_vec();
                let (outer, n, inner) = axis_extents(self.nodes[i].value.shape(), *axis);
                self.accum(*x, |gx| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |t: usize| (o * n + t) * inner + ii;
                            let dot: T = (0..n).map(|t| g[at(t)] * y[at(t)]).sum();
                            for t in 0..n {
                                gx[at(t)] += y[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Cumsum(x, axis) => {
                let (outer, n, inner) = axis_extents(self.nodes[i].value.shape(), *axis);
                self.accum(*x, |gx| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let mut acc = T::zero();
                            for t in (0..n).rev() {
                                acc += g[(o * n + t) * inner + ii];
                                gx[(o * n + t) * inner + ii] += acc;
                            }
                        }
                    }
                });
            }
            Op::SumAxis(x, axis) => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_extents(&shape, *axis);
                self.accum(*x, |gx| {
                    for o in 0..outer {
                        for t in 0..n {
                            for ii in 0..inner {
                                gx[(o * n + t) * inner + ii] += g[o * inner + ii];
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let s = g[0];
                self.accum(*x, |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            Op::MaxAxis(x, arg) => {
                self.accum(*x, |gx| {
                    for (j, &src) in arg.iter().enumerate() {
                        gx[src] += g[j];
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let shape = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = axis_extents(&shape, *axis);
                let mut start = 0;
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    self.accum(x, |gx| {
                        for o in 0..outer {
                            let src =
                                &g[(o * total + start) * inner..(o * total + start + n) * inner];
                            for (d, &s) in
                                gx[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src)
                            {
                                *d += s;
                            }
                        }
                    });
                    start += n;
                }
            }
            Op::Slice(x, axis, start) => {
                let shape = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_extents(&shape, *axis);
                let width = self.nodes[i].value.shape()[*axis];
                let start = *start;
                self.accum(*x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + width) * inner];
                        let src = &g[o * width * inner..(o + 1) * width * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Gather(table, idx) => {
                let d = self.shape(*table)[1];
                self.accum(*table, |gt| {
                    for (j, &row) in idx.iter().enumerate() {
                        for (dst, &s) in gt[row * d..(row + 1) * d]
                            .iter_mut()
                            .zip(&g[j * d..(j + 1) * d])
                        {
                            *dst += s;
                        }
                    }
                });
            }
            Op::PhaseRamp(x, rates, axis) => self.back_phase_ramp(*x, *rates, *axis, g),
            Op::DepthwiseConv(x, kernel, offset) => self.back_conv(*x, *kernel, *offset, g),
            Op::Frames(x, window, hop) => {
                let xs = self.shape(*x).to_vec();
                let (b, l, d) = (xs[0], xs[1], xs[2]);
                let (window, hop) = (*window, *hop);
                let count = (l - window) / hop + 1;
                self.accum(*x, |gx| {
                    for bi in 0..b {
                        for f in 0..count {
                            let dst = (bi * l + f * hop) * d;
                            let src = ((bi * count + f) * window) * d;
                            for j in 0..window * d {
                                gx[dst + j] += g[src + j];
                            }
                        }
                    }
                });
            }
            Op::AxisLinear(x, matrix, axis) => {
                let xs = self.shape(*x).to_vec();
                let (outer, w, inner) = axis_extents(&xs, *axis);
                let m = matrix.shape()[0];
                let mat = matrix.data();
                self.accum(*x, |gx| {
                    for o in 0..outer {
                        for mi in 0..m {
                            let src = &g[(o * m + mi) * inner..(o * m + mi + 1) * inner];
                            for wi in 0..w {
                                let coef = mat[mi * w + wi];
                                let dst = &mut gx[(o * w + wi) * inner..(o * w + wi + 1) * inner];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += coef * s;
                                }
                            }
                        }
                    }
                });
            }
            Op::Scan(gamma, v) => {
                let s = self.shape(*gamma).to_vec();
                let dims = ScanDims {
                    batch: s[0],
                    len: s[1],
                    width: s[2],
                };
                let (dg, dv) = scan::adjoint(
                    self.value(*gamma).data(),
                    self.value(*v).data(),
                    self.nodes[i].value.data(),
                    g,
                    dims,
                );
                self.accum(*gamma, |gg| {
                    gg.iter_mut().zip(&dg).for_each(|(d, &s)| *d += s)
                });
                self.accum(*v, |gv| gv.iter_mut().zip(&dv).for_each(|(d, &s)| *d += s));
            }
            Op::Epm(stack, weights) => {
                let ss = self.shape(*stack).to_vec();
                let k = ss[0];
                let d = *ss.last().unwrap();
                let per = g.len();
                let positions = per / d;
                self.accum(*stack, |gs| {
                    for ki in 0..k {
                        for p in 0..positions {
                            let w = weights[ki * positions + p];
                            for j in 0..d {
                                gs[ki * per + p * d + j] += w * g[p * d + j];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / T::lit(b as f64);
                self.accum(*logits, |gl| {
                    for (bi, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { T::one() } else { T::zero() };
                            gl[bi * c + j] += (probs[bi * c + j] - onehot) * scale;
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    fn back_binary(&mut self, i: usize, kind: Binary, a: Var, b: Var, g: &[T]) {
        let out_shape = self.nodes[i].value.shape().to_vec();
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
        if self.nodes[a.0].requires_grad {
            let mut ga = vec![T::zero(); va.len()];
            broadcast::for_each(&out_shape, &sa, &sb, |o, ia, ib| {
                ga[ia] += match kind {
                    Binary::Add | Binary::Sub => g[o],
                    Binary::Mul => g[o] * vb[ib],
                    Binary::Div => g[o] / vb[ib],
                };
            });
            self.accum(a, |d| d.iter_mut().zip(&ga).for_each(|(x, &y)| *x += y));
        }
        if self.nodes[b.0].requires_grad {
            let mut gb = vec![T::zero(); vb.len()];
            broadcast::for_each(&out_shape, &sa, &sb, |o, ia, ib| {
                gb[ib] += match kind {
                    Binary::Add => g[o],
                    Binary::Sub => -g[o],
                    Binary::Mul => g[o] * va[ia],
                    Binary::Div => -g[o] * va[ia] / (vb[ib] * vb[ib]),
                };
            });
            self.accum(b, |d| d.iter_mut().zip(&gb).for_each(|(x, &y)| *x += y));
        }
    }

    fn back_matmul(&mut self, x: Var, w: Var, g: &[T]) {
        let sw = self.shape(w).to_vec();
        let (k, n) = (sw[0], sw[1]);
        let rows = self.value(x).numel() / k.max(1);
        if self.nodes[x.0].requires_grad {
            let mut gx = vec![T::zero(); rows * k];
            // g[rows, n] @ w^T[n, k]
            T::gemm(
                rows,
                n,
                k,
                g,
                n as isize,
                1,
                self.value(w).data(),
                1,
                n as isize,
                T::zero(),
                &mut gx,
            );
            self.accum(x, |d| d.iter_mut().zip(&gx).for_each(|(a, &b)| *a += b));
        }
        if self.nodes[w.0].requires_grad {
            let mut gw = vec![T::zero(); k * n];
            // x^T[k, rows] @ g[rows, n]
            T::gemm(
                k,
                rows,
                n,
                self.value(x).data(),
                1,
                k as isize,
                g,
                n as isize,
                1,
                T::zero(),
                &mut gw,
            );
            self.accum(w, |d| d.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b));
        }
    }

    fn back_unary(&mut self, i: usize, kind: Unary, x: Var, g: &[T]) {
        let xv = self.value(x).data().to_vec();
        let y = self.nodes[i].value.data().to_vec();
        self.accum(x, |gx| {
            for j in 0..gx.len() {
                let d = match kind {
                    Unary::Sigmoid => y[j] * (T::one() - y[j]),
                    Unary::Tanh => T::one() - y[j] * y[j],
                    Unary::Sin => xv[j].cos(),
                    Unary::Cos => -xv[j].sin(),
                    Unary::Exp => y[j],
                    Unary::Log => T::one() / xv[j],
                    Unary::Abs => signum0(xv[j]),
                    Unary::Sign => T::zero(),
                    Unary::Softplus => sigmoid(xv[j]),
                };
                gx[j] += g[j] * d;
            }
        });
    }

    fn back_pow(&mut self, i: usize, x: Var, e: Var, g: &[T]) {
        let xv = self.value(x).data().to_vec();
        let y = self.nodes[i].value.data().to_vec();
        let ev = self.value(e).data()[0];
        self.accum(x, |gx| {
            for j in 0..gx.len() {
                if xv[j] > T::zero() {
                    gx[j] += g[j] * ev * xv[j].powf(ev - T::one());
                }
            }
        });
        if self.nodes[e.0].requires_grad {
            let mut ge = T::zero();
            for j in 0..xv.len() {
                if xv[j] > T::zero() {
                    ge += g[j] * y[j] * xv[j].ln();
                }
            }
            self.accum(e, |d| d[0] += ge);
        }
    }

    fn back_phase_ramp(&mut self, x: Var, rates: Var, axis: usize, g: &[T]) {
        let xs = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&xs, axis);
        let rates_v = self.value(rates).data().to_vec();
        let r_count = rates_v.len();
        let lane_total = outer * n * inner;
        let mut plan = RealFft::<T>::new(n);
        let nb = plan.bins();
        let conj_ramps = ramp_table(&rates_v, nb, -T::one());
        let ramps = ramp_table(&rates_v, nb, T::one());
        let want_x = self.nodes[x.0].requires_grad;
        let want_r = self.nodes[rates.0].requires_grad;
        let mut gx = vec![T::zero(); if want_x { lane_total } else { 0 }];
        let mut gr = vec![T::zero(); r_count];
        let zero = Complex::new(T::zero(), T::zero());
        let mut lane = vec![T::zero(); n];
        let mut back = vec![T::zero(); n];
        let mut spec = vec![zero; nb];
        let mut acc = vec![zero; nb];
        let mut xspec = vec![zero; nb];
        let mut tmp = vec![zero; nb];
        let src = self.value(x).data();
        for o in 0..outer {
            for ii in 0..inner {
                if want_r {
                    for (t, v) in lane.iter_mut().enumerate() {
                        *v = src[(o * n + t) * inner + ii];
                    }
                    plan.forward(&lane, &mut xspec);
                }
                acc.iter_mut().for_each(|a| *a = zero);
                for r in 0..r_count {
                    let gbase = r * lane_total;
                    for (t, v) in lane.iter_mut().enumerate() {
                        *v = g[gbase + (o * n + t) * inner + ii];
                    }
                    plan.forward(&lane, &mut spec);
                    if want_x {
                        for k in 0..nb {
                            acc[k] = acc[k] + spec[k] * conj_ramps[r * nb + k];
                        }
                    }
                    if want_r {
                        // d/dθ of irfft(X e^{-ikθ}) = irfft(-ik X e^{-ikθ})
                        for k in 0..nb {
                            let kk = T::lit(k as f64);
                            tmp[k] = xspec[k] * ramps[r * nb + k] * Complex::new(T::zero(), -kk);
                        }
                        plan.inverse(&tmp, &mut back);
                        let dot: T = back.iter().zip(&lane).map(|(a, b)| *a * *b).sum();
                        gr[r] += dot;
                    }
                }
                if want_x {
                    plan.inverse(&acc, &mut back);
                    for (t, v) in back.iter().enumerate() {
                        gx[(o * n + t) * inner + ii] += *v;
                    }
                }
            }
        }
        if want_x {
            self.accum(x, |d| d.iter_mut().zip(&gx).for_each(|(a, &b)| *a += b));
        }
        if want_r {
            self.accum(rates, |d| d.iter_mut().zip(&gr).for_each(|(a, &b)| *a += b));
        }
    }

    fn back_conv(&mut self, x: Var, kernel: Var, offset: usize, g: &[T]) {
        let xs = self.shape(x).to_vec();
        let (b, l, c) = (xs[0], xs[1], xs[2]);
        let taps = self.shape(kernel)[0];
        let src = self.value(x).data().to_vec();
        let ker = self.value(kernel).data().to_vec();
        let want_x = self.nodes[x.0].requires_grad;
        let want_k = self.nodes[kernel.0].requires_grad;
        let mut gx = vec![T::zero(); if want_x { src.len() } else { 0 }];
        let mut gk = vec![T::zero(); if want_k { ker.len() } else { 0 }];
        for bi in 0..b {
            for t in 0..l {
                let grow = &g[(bi * l + t) * c..(bi * l + t + 1) * c];
                for j in 0..taps {
                    let pos = t as isize - j as isize + offset as isize;
                    if pos < 0 || pos >= l as isize {
                        continue;
                    }
                    let base = (bi * l + pos as usize) * c;
                    for ch in 0..c {
                        if want_x {
                            gx[base + ch] += ker[j * c + ch] * grow[ch];
                        }
                        if want_k {
                            gk[j * c + ch] += src[base + ch] * grow[ch];
                        }
                    }
                }
            }
        }
        if want_x {
            self.accum(x, |d| d.iter_mut().zip(&gx).for_each(|(a, &b)| *a += b));
        }
        if want_k {
            self.accum(kernel, |d| {
                d.iter_mut().zip(&gk).for_each(|(a, &b)| *a += b)
            });
        }
    }
}

/// `e^{-i·sign·k·rate}` for every rate and bin, rate-major.
fn ramp_table<T: Real>(rates: &[T], bins: usize, sign: T) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(rates.len() * bins);
    for &r in rates {
        for k in 0..bins {
            let phase = -sign * T::lit(k as f64) * r;
            out.push(Complex::new(phase.cos(), phase.sin()));
        }
    }
    out
}
