//! The gated linear recurrence `s_t = γ_t·s_{t-1} + (1-γ_t)·v_t` over the
//! sequence axis of `[B, L, d]` buffers, with `s_{-1} = 0`.
//!
//! The chunked form computes prefix products `P_t = exp(Σ log γ)` inside each
//! chunk so that `s_t = P_t·(carry + Σ_{j≤t} (1-γ_j)·v_j / P_j)`; only the
//! carry crosses chunk boundaries. Padded positions use `γ = 1`, so the gate
//! domain accepted here is `(0, 1]`.

use crate::tensor::Real;
use crate::Error;

pub const DEFAULT_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub width: usize,
}

impl ScanDims {
    fn numel(&self) -> usize {
        self.batch * self.len * self.width
    }
}

fn validate<T: Real>(gamma: &[T], v: &[T], dims: ScanDims) -> Result<(), Error> {
    if gamma.len() != dims.numel() || v.len() != dims.numel() {
        return Err(Error::Shape(format!(
            "scan: gamma has {} and v has {} elements, expected {:?}",
            gamma.len(),
            v.len(),
            dims
        )));
    }
    if let Some((i, g)) = gamma
        .iter()
        .enumerate()
        .find(|(_, &g)| !(g > T::zero() && g <= T::one()))
    {
        return Err(Error::Domain(format!(
            "scan: gamma[{i}] = {g} is outside (0, 1]"
        )));
    }
    Ok(())
}

fn initial_state<T: Real>(init: Option<&[T]>, dims: ScanDims) -> Result<Vec<T>, Error> {
    match init {
        None => Ok(vec![T::zero(); dims.batch * dims.width]),
        Some(s) if s.len() == dims.batch * dims.width => Ok(s.to_vec()),
        Some(s) => Err(Error::Shape(format!(
            "scan: initial state has {} elements, expected {}",
            s.len(),
            dims.batch * dims.width
        ))),
    }
}

/// Step-by-step evaluation of the recurrence.
pub fn sequential<T: Real>(gamma: &[T], v: &[T], dims: ScanDims) -> Result<Vec<T>, Error> {
    sequential_from(gamma, v, dims, None)
}

/// Sequential evaluation starting from an explicit `[B, d]` state.
pub fn sequential_from<T: Real>(
    gamma: &[T],
    v: &[T],
    dims: ScanDims,
    init: Option<&[T]>,
) -> Result<Vec<T>, Error> {
    validate(gamma, v, dims)?;
    let init = initial_state(init, dims)?;
    let ScanDims { batch, len, width } = dims;
    let mut out = vec![T::zero(); dims.numel()];
    for b in 0..batch {
        let mut state = init[b * width..(b + 1) * width].to_vec();
        for t in 0..len {
            let base = (b * len + t) * width;
            for c in 0..width {
                let g = gamma[base + c];
                state[c] = g * state[c] + (T::one() - g) * v[base + c];
                out[base + c] = state[c];
            }
        }
    }
    Ok(out)
}

/// Chunked evaluation: log-space prefix products within each chunk and a
/// serial carry between chunks.
pub fn chunked<T: Real>(
    gamma: &[T],
    v: &[T],
    dims: ScanDims,
    chunk: usize,
) -> Result<Vec<T>, Error> {
    chunked_from(gamma, v, dims, chunk, None)
}

/// Chunked evaluation starting from an explicit `[B, d]` state.
pub fn chunked_from<T: Real>(
    gamma: &[T],
    v: &[T],
    dims: ScanDims,
    chunk: usize,
    init: Option<&[T]>,
) -> Result<Vec<T>, Error> {
    if chunk == 0 {
        return Err(Error::Config("scan chunk size must be positive".into()));
    }
    validate(gamma, v, dims)?;
    let init = initial_state(init, dims)?;
    let ScanDims { batch, len, width } = dims;
    let mut out = vec![T::zero(); dims.numel()];
    let mut carry = vec![T::zero(); width];
    let mut log_p = vec![T::zero(); width];
    let mut acc = vec![T::zero(); width];
    for b in 0..batch {
        carry.copy_from_slice(&init[b * width..(b + 1) * width]);
        for start in (0..len).step_by(chunk) {
            let end = (start + chunk).min(len);
            log_p.iter_mut().for_each(|x| *x = T::zero());
            acc.iter_mut().for_each(|x| *x = T::zero());
            for t in start..end {
                let base = (b * len + t) * width;
                for c in 0..width {
                    let g = gamma[base + c];
                    log_p[c] += g.ln();
                    let p = log_p[c].exp();
                    acc[c] += (T::one() - g) * v[base + c] / p;
                    out[base + c] = p * (carry[c] + acc[c]);
                }
            }
            let last = (b * len + end - 1) * width;
            carry.copy_from_slice(&out[last..last + width]);
        }
    }
    Ok(out)
}

/// Adjoint of the recurrence given the forward states `s` and the upstream
/// gradient `grad` on `s`. Returns `(d gamma, d v)`.
///
/// With `λ_t = grad_t + γ_{t+1}·λ_{t+1}`:
/// `dv_t = (1-γ_t)·λ_t` and `dγ_t = λ_t·(s_{t-1} - v_t)`.
pub fn adjoint<T: Real>(
    gamma: &[T],
    v: &[T],
    s: &[T],
    grad: &[T],
    dims: ScanDims,
) -> (Vec<T>, Vec<T>) {
    let ScanDims { batch, len, width } = dims;
    let mut d_gamma = vec![T::zero(); dims.numel()];
    let mut d_v = vec![T::zero(); dims.numel()];
    let mut lambda = vec![T::zero(); width];
    for b in 0..batch {
        lambda.iter_mut().for_each(|x| *x = T::zero());
        for t in (0..len).rev() {
            let base = (b * len + t) * width;
            for c in 0..width {
                if t + 1 < len {
                    lambda[c] *= gamma[base + width + c];
                }
                lambda[c] += grad[base + c];
                let g = gamma[base + c];
                let prev = if t == 0 {
                    T::zero()
                } else {
                    s[base - width + c]
                };
                d_v[base + c] = (T::one() - g) * lambda[c];
                d_gamma[base + c] = lambda[c] * (prev - v[base + c]);
            }
        }
    }
    (d_gamma, d_v)
}
