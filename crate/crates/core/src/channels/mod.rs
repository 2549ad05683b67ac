//! Token-level sequencer: four parallel channels over `H'` fused by
//! energy-proportional mixing and added back through a diagnostic gate.
//!
//! `Z = H' + ε_diag ⊙ dropout(EPM(reverb, conv, consonance, dissonance))`
//!
//! `ε_diag` starts at zero, so `Z == H'` exactly at initialization.

pub mod scan;

use crate::config::ModelConfig;
use crate::graph::{Graph, Var};
use crate::layers::{self, dropout, linear, mask_column};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::Error;

/// Gated linear recurrence with a content gate plus a learned per-position
/// decay bias.
#[derive(Clone, Debug)]
pub struct Reverb {
    w_in: ParamId,
    w_gate: ParamId,
    w_out: ParamId,
    alpha: ParamId,
}

/// `γ = γ_min + (γ_max - γ_min)·σ(h·W_gate + α_t)` for `h[B, L, d]`.
pub fn reverb_gate<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    w_gate: Var,
    alpha: Var,
    gamma_min: f64,
    gamma_max: f64,
) -> Var {
    let len = g.shape(h)[1];
    let logit = g.matmul(h, w_gate);
    let a = g.slice(alpha, 0, 0, len);
    let a = g.reshape(a, &[1, len, 1]);
    let logit = g.add(logit, a);
    let s = g.sigmoid(logit);
    let s = g.scale(s, T::lit(gamma_max - gamma_min));
    g.add_scalar(s, T::lit(gamma_min))
}

impl Reverb {
    fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let d = cfg.d;
        Reverb {
            w_in: store.add("reverb.w_in", layers::uniform_fan_in(&[d, d], d, rng)),
            w_gate: store.add("reverb.w_gate", layers::uniform_fan_in(&[d, d], d, rng)),
            w_out: store.add("reverb.w_out", layers::uniform_fan_in(&[d, d], d, rng)),
            alpha: store.add("reverb.alpha_pos", Tensor::zeros(&[cfg.l_max])),
        }
    }

    /// Decay gate before padding is applied, `[B, L, d]`.
    pub fn gate<T: Real>(&self, cfg: &ModelConfig, g: &mut Graph<T>, p: &Bound, h: Var) -> Var {
        reverb_gate(
            g,
            h,
            p[self.w_gate],
            p[self.alpha],
            cfg.gamma_min,
            cfg.gamma_max,
        )
    }

    pub fn forward<T: Real>(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph<T>,
        p: &Bound,
        h: Var,
        mask: &[u8],
    ) -> Result<Var, Error> {
        let s = g.shape(h).to_vec();
        let (b, l) = (s[0], s[1]);
        if l > cfg.l_max {
            return Err(Error::Config(format!(
                "sequence has {l} frames but the positional decay bias covers {} \
                 (raise model.l_max)",
                cfg.l_max
            )));
        }
        let v = g.matmul(h, p[self.w_in]);
        let gamma = self.gate(cfg, g, p, h);
        // padding: γ = 1, v = 0, so the carry passes through untouched
        let m = mask_column(g, mask, b, l);
        let keep: Vec<T> = mask
            .iter()
            .map(|&v| if v == 1 { T::zero() } else { T::one() })
            .collect();
        let keep = g.constant(Tensor::new(&[b, l, 1], keep));
        let gamma = g.mul(gamma, m);
        let gamma = g.add(gamma, keep);
        let v = g.mul(v, m);
        let state = g.linear_scan(gamma, v);
        Ok(g.matmul(state, p[self.w_out]))
    }
}

/// Depthwise (centered, odd kernel) then pointwise convolution.
#[derive(Clone, Debug)]
pub struct ConvLite {
    depthwise: ParamId,
    pointwise: ParamId,
}

impl ConvLite {
    fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>) -> Self {
        let (k, d) = (cfg.conv_kernel, cfg.d);
        let mut dw = Tensor::zeros(&[k, d]);
        dw.data_mut()[(k / 2) * d..(k / 2 + 1) * d]
            .iter_mut()
            .for_each(|v| *v = T::one());
        ConvLite {
            depthwise: store.add("conv.depthwise", dw),
            pointwise: store.add("conv.pointwise", layers::identity(d)),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, h: Var) -> Result<Var, Error> {
        conv1d_depthwise_separable(g, h, p[self.depthwise], p[self.pointwise])
    }
}

pub fn conv1d_depthwise_separable<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    depthwise: Var,
    pointwise: Var,
) -> Result<Var, Error> {
    let k = g.shape(depthwise)[0];
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv kernel must be odd, got {k}")));
    }
    let y = g.depthwise_conv1d(x, depthwise, k / 2);
    Ok(g.matmul(y, pointwise))
}

/// `ψ⁽ᵏ⁺¹⁾ = tanh((a + αψ⁽ᵏ⁾)(b + αψ⁽ᵏ⁾)/s)` from `ψ⁽⁰⁾ = 0`, returning
/// `ψ⁽ⁱᵗᵉʳᵃᵗⁱᵒⁿˢ⁾`.
pub fn consonance<T: Real>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    alpha: Var,
    scale: Var,
    iterations: usize,
) -> Var {
    let shape = g.shape(a).to_vec();
    let mut psi = g.constant(Tensor::zeros(&shape));
    for _ in 0..iterations {
        let ap = g.mul(psi, alpha);
        let l = g.add(a, ap);
        let r = g.add(b, ap);
        let prod = g.mul(l, r);
        let arg = g.div(prod, scale);
        psi = g.tanh(arg);
    }
    psi
}

/// `adapted + ε·tanh(|x - adapted|/s)`.
pub fn dissonance<T: Real>(g: &mut Graph<T>, x: Var, adapted: Var, eps: Var, scale: Var) -> Var {
    let diff = g.sub(x, adapted);
    let diff = g.abs(diff);
    let arg = g.div(diff, scale);
    let t = g.tanh(arg);
    let t = g.mul(t, eps);
    g.add(adapted, t)
}

#[derive(Clone, Debug)]
struct Adapter {
    w: ParamId,
    b: ParamId,
}

impl Adapter {
    fn register<T: Real>(prefix: &str, d: usize, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        Adapter {
            w: store.add(
                format!("{prefix}.adapter_w"),
                layers::uniform_fan_in(&[d, d], d, rng),
            ),
            b: store.add(format!("{prefix}.adapter_b"), Tensor::zeros(&[d])),
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        linear(g, x, p[self.w], Some(p[self.b]))
    }
}

#[derive(Clone, Debug)]
pub struct Consonance {
    adapter: Adapter,
    alpha: ParamId,
    scale: ParamId,
    eps: ParamId,
}

impl Consonance {
    fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let d = cfg.d;
        Consonance {
            adapter: Adapter::register("consonance", d, store, rng),
            alpha: store.add("consonance.alpha", Tensor::from_f64(&[1], &[cfg.psi_alpha])),
            scale: store.add(
                "consonance.scale",
                Tensor::from_f64(&[1], &[layers::softplus_inv(cfg.psi_scale)]),
            ),
            eps: store.add(
                "consonance.eps",
                Tensor::full(&[d], T::lit(cfg.consonance_gate_init)),
            ),
        }
    }

    pub fn forward<T: Real>(&self, cfg: &ModelConfig, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let b = self.adapter.apply(g, p, x);
        let s = g.softplus(p[self.scale]);
        let psi = consonance(g, x, b, p[self.alpha], s, cfg.psi_iterations);
        g.mul(psi, p[self.eps])
    }
}

#[derive(Clone, Debug)]
pub struct Dissonance {
    adapter: Adapter,
    scale: ParamId,
    eps: ParamId,
}

impl Dissonance {
    fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        Dissonance {
            adapter: Adapter::register("dissonance", cfg.d, store, rng),
            scale: store.add(
                "dissonance.scale",
                Tensor::from_f64(&[1], &[layers::softplus_inv(cfg.psi_scale)]),
            ),
            eps: store.add("dissonance.eps", Tensor::zeros(&[cfg.d])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let a = self.adapter.apply(g, p, x);
        let s = g.softplus(p[self.scale]);
        dissonance(g, x, a, p[self.eps], s)
    }
}

#[derive(Clone, Debug)]
pub struct Sequencer {
    pub reverb: Option<Reverb>,
    pub conv: Option<ConvLite>,
    pub consonance: Option<Consonance>,
    pub dissonance: Option<Dissonance>,
    diag: ParamId,
}

#[derive(Clone, Debug)]
pub struct SequencerOutput {
    pub z: Var,
    /// Masked channel outputs in the order reverb, conv, consonance,
    /// dissonance (disabled channels omitted).
    pub channels: Vec<Var>,
    pub merged: Option<Var>,
}

impl Sequencer {
    pub fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        Sequencer {
            reverb: cfg.reverb.then(|| Reverb::register(cfg, store, rng)),
            conv: cfg.conv.then(|| ConvLite::register(cfg, store)),
            consonance: cfg
                .consonance
                .then(|| Consonance::register(cfg, store, rng)),
            dissonance: cfg
                .dissonance
                .then(|| Dissonance::register(cfg, store, rng)),
            diag: store.add("diagnostic.eps", Tensor::zeros(&[cfg.d])),
        }
    }

    pub fn forward<T: Real>(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph<T>,
        p: &Bound,
        h: Var,
        mask: &[u8],
        rng: Option<&mut Rng>,
    ) -> Result<SequencerOutput, Error> {
        let s = g.shape(h).to_vec();
        let (b, l) = (s[0], s[1]);
        let m = mask_column(g, mask, b, l);
        let mut raw = Vec::new();
        if let Some(r) = &self.reverb {
            raw.push(r.forward(cfg, g, p, h, mask)?);
        }
        if let Some(c) = &self.conv {
            raw.push(c.forward(g, p, h)?);
        }
        if let Some(c) = &self.consonance {
            raw.push(c.forward(cfg, g, p, h));
        }
        if let Some(c) = &self.dissonance {
            raw.push(c.forward(g, p, h));
        }
        let channels: Vec<Var> = raw.into_iter().map(|c| g.mul(c, m)).collect();
        if channels.is_empty() {
            return Ok(SequencerOutput {
                z: h,
                channels,
                merged: None,
            });
        }
        let stack = g.stack(&channels);
        let merged = g.epm(stack, T::lit(cfg.epm_eps));
        let dropped = dropout(g, merged, cfg.dropout, rng);
        let dropped = g.mul(dropped, m);
        let gated = g.mul(dropped, p[self.diag]);
        let z = g.add(h, gated);
        Ok(SequencerOutput {
            z,
            channels,
            merged: Some(merged),
        })
    }
}
