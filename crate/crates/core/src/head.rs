//! Sequence pooling and the classifier.

use crate::config::{ModelConfig, Pooling};
use crate::graph::{Graph, Var};
use crate::layers::{self, linear, mask_bias, mask_column};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Head {
    query: ParamId,
    w: ParamId,
    b: ParamId,
    pooling: Pooling,
}

/// Attention pooling with a single query: `Σ_t softmax_t(q·z_t)·z_t` over
/// valid positions. `z[B, L, d]`, result `[B, d]`.
pub fn attn_pool<T: Real>(g: &mut Graph<T>, z: Var, query: Var, mask: &[u8]) -> Var {
    let s = g.shape(z).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    let q = g.reshape(query, &[d, 1]);
    let scores = g.matmul(z, q);
    let bias = mask_bias(g, mask, b, l);
    let scores = g.add(scores, bias);
    let w = g.softmax(scores, 1);
    let weighted = g.mul(z, w);
    let pooled = g.sum_axis(weighted, 1);
    g.reshape(pooled, &[b, d])
}

/// Elementwise maximum over valid positions, `[B, d]`.
pub fn max_pool<T: Real>(g: &mut Graph<T>, z: Var, mask: &[u8]) -> Var {
    let s = g.shape(z).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    let bias = mask_bias(g, mask, b, l);
    let shifted = g.add(z, bias);
    let m = g.max_axis(shifted, 1);
    g.reshape(m, &[b, d])
}

/// Mean over valid positions, `[B, d]`.
pub fn mean_pool<T: Real>(g: &mut Graph<T>, z: Var, mask: &[u8]) -> Var {
    let s = g.shape(z).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    let m = mask_column(g, mask, b, l);
    let masked = g.mul(z, m);
    let total = g.sum_axis(masked, 1);
    let inv: Vec<T> = mask
        .chunks(l)
        .map(|row| T::one() / T::lit(row.iter().filter(|&&v| v == 1).count() as f64))
        .collect();
    let inv = g.constant(Tensor::new(&[b, 1, 1], inv));
    let mean = g.mul(total, inv);
    g.reshape(mean, &[b, d])
}

/// `[AttnPool ∥ MaxPool]`, `[B, 2d]`.
pub fn dual_pool<T: Real>(g: &mut Graph<T>, z: Var, query: Var, mask: &[u8]) -> Var {
    let a = attn_pool(g, z, query, mask);
    let m = max_pool(g, z, mask);
    g.concat(&[a, m], 1)
}

impl Head {
    pub fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let d = cfg.d;
        let width = match cfg.pooling {
            Pooling::Dual => 2 * d,
            Pooling::Mean => d,
        };
        Head {
            query: store.add(
                "head.query",
                layers::normal(&[d], 1.0 / (d as f64).sqrt(), rng),
            ),
            w: store.add(
                "head.w",
                layers::uniform_fan_in(&[width, cfg.num_classes], width, rng),
            ),
            b: store.add("head.b", Tensor::zeros(&[cfg.num_classes])),
            pooling: cfg.pooling,
        }
    }

    /// Logits `[B, C]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var, mask: &[u8]) -> Var {
        let pooled = match self.pooling {
            Pooling::Dual => dual_pool(g, z, p[self.query], mask),
            Pooling::Mean => mean_pool(g, z, mask),
        };
        linear(g, pooled, p[self.w], Some(p[self.b]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        layers::normal(shape, 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn single_valid_position_fills_both_halves() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(rand(&[1, 4, 3], 1));
        let q = g.constant(rand(&[3], 2));
        let p = dual_pool(&mut g, z, q, &[1, 0, 0, 0]);
        let row = g.value(z).data()[..3].to_vec();
        let out = g.value(p).data();
        assert_eq!(g.shape(p), &[1, 6]);
        for i in 0..3 {
            assert!((out[i] - row[i]).abs() < 1e-15);
            assert_eq!(out[3 + i], row[i]);
        }
    }

    #[test]
    fn zero_query_gives_masked_mean() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(rand(&[2, 5, 3], 3));
        let q = g.constant(Tensor::zeros(&[3]));
        let mask = [1, 1, 1, 0, 0, 1, 1, 1, 1, 1];
        let a = attn_pool(&mut g, z, q, &mask);
        let m = mean_pool(&mut g, z, &mask);
        assert!(g.value(a).max_abs_diff(g.value(m)) < 1e-14);
    }

    #[test]
    fn masked_positions_cannot_leak() {
        let base = rand(&[1, 5, 3], 4);
        let mut poisoned = base.clone();
        for v in &mut poisoned.data_mut()[9..] {
            *v = 1e6;
        }
        let mask = [1, 1, 1, 0, 0];
        let mut g = Graph::<f64>::new();
        let q = g.constant(rand(&[3], 5));
        let a = g.constant(base);
        let b = g.constant(poisoned);
        let pa = dual_pool(&mut g, a, q, &mask);
        let pb = dual_pool(&mut g, b, q, &mask);
        assert_eq!(g.value(pa).data(), g.value(pb).data());
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut g = Graph::<f64>::new();
        let z2 = g.constant(Tensor::zeros(&[3, 2]));
        let l2 = g.cross_entropy(z2, &[0, 1, 1]);
        assert!((g.value(l2).data()[0] - 2f64.ln()).abs() < 1e-12);
        let z4 = g.constant(Tensor::zeros(&[2, 4]));
        let l4 = g.cross_entropy(z4, &[3, 0]);
        assert!((g.value(l4).data()[0] - 4f64.ln()).abs() < 1e-12);
        let sure = g.constant(Tensor::from_f64(&[1, 2], &[20.0, 0.0]));
        let l = g.cross_entropy(sure, &[0]);
        assert!(g.value(l).data()[0] < 1e-8);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_label_panics() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1, 2]));
        g.cross_entropy(z, &[2]);
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero() {
        let mut g = Graph::<f64>::new();
        let z = g.param(rand(&[4, 3], 6));
        let l = g.cross_entropy(z, &[0, 2, 1, 1]);
        g.backward(l);
        let gz = g.grad(z).unwrap();
        for row in gz.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn pooled_width_follows_pooling_mode() {
        let mut cfg = ModelConfig::tiny();
        for (mode, width) in [(Pooling::Dual, 16), (Pooling::Mean, 8)] {
            cfg.pooling = mode;
            let mut store = ParamStore::<f64>::new();
            Head::register(&cfg, &mut store, &mut Rng::new(1));
            assert_eq!(store.by_name("head.w").unwrap().shape(), &[width, 2]);
        }
    }
}
