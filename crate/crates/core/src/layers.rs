//! Initializers and small graph building blocks shared by the model parts.

use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// `U(-1/√fan_in, 1/√fan_in)`.
pub fn uniform_fan_in<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_f64(shape, &data)
}

pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::from_f64(shape, &data)
}

pub fn identity<T: Real>(n: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = T::one();
    }
    t
}

/// Inverse of softplus, for initializing positive reparameterized scalars.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv: {y} is not positive");
    y + (-(-y).exp_m1()).ln()
}

/// `x @ w (+ b)`.
pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Var {
    let y = g.matmul(x, w);
    match b {
        Some(b) => g.add(y, b),
        None => y,
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is 0.
pub fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, rng: Option<&mut Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.unit() < rate { T::zero() } else { keep })
        .collect();
    let m = g.constant(Tensor::new(&shape, mask));
    g.mul(x, m)
}

/// Position mask `[B, L]` as a `[B, L, 1]` constant.
pub fn mask_column<T: Real>(g: &mut Graph<T>, mask: &[u8], batch: usize, len: usize) -> Var {
    assert_eq!(
        mask.len(),
        batch * len,
        "mask_column: mask is not {batch}x{len}"
    );
    let data = mask
        .iter()
        .map(|&m| if m == 1 { T::one() } else { T::zero() })
        .collect();
    g.constant(Tensor::new(&[batch, len, 1], data))
}

/// Finite stand-in for `-∞` on masked attention/max logits.
pub const MASK_BIAS: f64 = -1e30;

/// `0` on valid positions, [`MASK_BIAS`] on padding, shaped `[B, L, 1]`.
pub fn mask_bias<T: Real>(g: &mut Graph<T>, mask: &[u8], batch: usize, len: usize) -> Var {
    assert_eq!(
        mask.len(),
        batch * len,
        "mask_bias: mask is not {batch}x{len}"
    );
    let data = mask
        .iter()
        .map(|&m| if m == 1 { T::zero() } else { T::lit(MASK_BIAS) })
        .collect();
    g.constant(Tensor::new(&[batch, len, 1], data))
}
