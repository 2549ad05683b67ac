//! Byte frontend: raw bytes to hidden states `H' [B, L', d]`.
//!
//! encode → power-law gate → damped-sine filter bank → phase shifts (EPM) →
//! frames + DCT basis → phase harmonics → projection.

use std::f64::consts::PI;

use crate::config::ModelConfig;
use crate::data::ByteBatch;
use crate::graph::{Graph, Var};
use crate::layers::{self, dropout, linear, mask_column};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::Error;

#[derive(Clone, Debug)]
pub struct Frontend {
    wavetable: ParamId,
    plg: ParamId,
    decay: ParamId,
    omega: ParamId,
    phase: ParamId,
    mix: ParamId,
    delta: ParamId,
    basis_map: ParamId,
    basis_bias: ParamId,
    phases: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct FrontendOutput {
    /// `H'`, `[B, L', d]`, zero on invalid frames.
    pub hidden: Var,
    /// Frame validity, `B × L'`.
    pub mask: Vec<u8>,
    pub batch: usize,
    pub frames: usize,
}

impl Frontend {
    pub fn register<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let (d, f, s, m, k) = (
            cfg.d,
            cfg.freq_filters,
            cfg.phase_shifts,
            cfg.basis,
            cfg.harmonics,
        );
        let wavetable = store.add("encoder.wavetable", layers::normal(&[d], 1.0, rng));
        let plg = store.add(
            "plg.exponent",
            Tensor::from_f64(&[1], &[layers::softplus_inv(1.0)]),
        );
        let decay: Vec<f64> = (0..f)
            .map(|_| layers::softplus_inv(rng.uniform(0.1, 1.0)))
            .collect();
        let decay = store.add("freq_pattern.decay", Tensor::from_f64(&[f], &decay));
        let omega: Vec<f64> = (0..f).map(|i| PI * i as f64 / f as f64).collect();
        let omega = store.add("freq_pattern.omega", Tensor::from_f64(&[f], &omega));
        let phase: Vec<f64> = (0..f).map(|_| rng.uniform(0.0, 2.0 * PI)).collect();
        let phase = store.add("freq_pattern.phase", Tensor::from_f64(&[f], &phase));
        let mix = store.add("freq_pattern.mix", layers::uniform_fan_in(&[f, d], f, rng));
        let delta: Vec<f64> = (0..s).map(|i| 2.0 * PI * i as f64 / s as f64).collect();
        let delta = store.add("phase_shift.delta", Tensor::from_f64(&[s], &delta));
        let basis_map = store.add("basis.map", layers::uniform_fan_in(&[m, d], m, rng));
        let basis_bias = store.add("basis.bias", Tensor::zeros(&[d]));
        let phases = store.add("harmonics.phases", Tensor::zeros(&[k]));
        let wide = (k + 1) * d;
        let proj_w = store.add(
            "harmonics.proj_w",
            layers::uniform_fan_in(&[wide, d], wide, rng),
        );
        let proj_b = store.add("harmonics.proj_b", Tensor::zeros(&[d]));
        Frontend {
            wavetable,
            plg,
            decay,
            omega,
            phase,
            mix,
            delta,
            basis_map,
            basis_bias,
            phases,
            proj_w,
            proj_b,
        }
    }

    pub fn forward<T: Real>(
        &self,
        cfg: &ModelConfig,
        g: &mut Graph<T>,
        p: &Bound,
        batch: &ByteBatch,
        mut rng: Option<&mut Rng>,
    ) -> Result<FrontendOutput, Error> {
        let padded;
        let batch = if batch.len() < cfg.window {
            padded = batch.with_len(cfg.window);
            &padded
        } else {
            batch
        };
        let (b, l) = (batch.batch(), batch.len());
        let m = mask_column(g, batch.mask(), b, l);

        let enc = encode_bytes(
            g,
            p[self.wavetable],
            batch.bytes(),
            &[b, l],
            cfg.shift_denominator,
        );
        let enc = g.mul(enc, m);
        let x = power_law_gate(g, enc, p[self.plg]);
        let x = learned_freq_pattern(
            g,
            x,
            [p[self.decay], p[self.omega], p[self.phase], p[self.mix]],
            cfg.freq_kernel,
        );
        let x = g.mul(x, m);
        let x = phase_shift(g, x, p[self.delta], T::lit(cfg.epm_eps));
        let x = g.mul(x, m);

        let frames = cfg.frames_for(l);
        let fmask = frame_mask(batch.mask(), b, l, cfg.window, cfg.hop);
        let x = freq_basis(
            g,
            x,
            cfg.window,
            cfg.hop,
            cfg.basis,
            p[self.basis_map],
            p[self.basis_bias],
        );
        let fm = mask_column(g, &fmask, b, frames);
        let x = g.mul(x, fm);
        let x = phase_harmonics(g, x, p[self.phases]);
        let x = linear(g, x, p[self.proj_w], Some(p[self.proj_b]));
        let x = dropout(g, x, cfg.dropout, rng.as_deref_mut());
        let hidden = g.mul(x, fm);
        Ok(FrontendOutput {
            hidden,
            mask: fmask,
            batch: b,
            frames,
        })
    }
}

/// Phase-ramp rates for the 256 byte values: byte `b` rotates by
/// `2π·b/denominator` radians per bin.
pub fn byte_rates<T: Real>(denominator: usize) -> Tensor<T> {
    let r: Vec<f64> = (0..256)
        .map(|b| 2.0 * PI * b as f64 / denominator as f64)
        .collect();
    Tensor::from_f64(&[256], &r)
}

/// Wavetable lookup `[shape..., d]`: every byte is the wavetable circularly
/// shifted by `b·d/denominator` samples (fractional shifts band-limited).
pub fn encode_bytes<T: Real>(
    g: &mut Graph<T>,
    wavetable: Var,
    bytes: &[u8],
    shape: &[usize],
    denominator: usize,
) -> Var {
    let rates = g.constant(byte_rates(denominator));
    let table = g.phase_ramp(wavetable, rates, 0);
    let idx: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
    g.gather(table, &idx, shape)
}

/// `sign(x)·|x|^softplus(raw)`.
pub fn power_law_gate<T: Real>(g: &mut Graph<T>, x: Var, exponent_raw: Var) -> Var {
    let e = g.softplus(exponent_raw);
    let s = g.sign(x);
    let a = g.abs(x);
    let p = g.pow(a, e);
    g.mul(s, p)
}

/// Damped-sine bank `k[t, f] = e^{-softplus(decay_f)·t}·sin(omega_f·t + phase_f)`.
pub fn damped_sine_kernels<T: Real>(
    g: &mut Graph<T>,
    decay_raw: Var,
    omega: Var,
    phase: Var,
    taps: usize,
) -> Var {
    let t: Vec<f64> = (0..taps).map(|t| t as f64).collect();
    let t = g.constant(Tensor::from_f64(&[taps, 1], &t));
    let rate = g.softplus(decay_raw);
    let decay = g.mul(t, rate);
    let decay = g.neg(decay);
    let env = g.exp(decay);
    let arg = g.mul(t, omega);
    let arg = g.add(arg, phase);
    let wave = g.sin(arg);
    g.mul(env, wave)
}

/// Causal convolution of each channel with a learned mixture of the damped
/// sine bank: `K = k @ mix`, `y[t, c] = Σ_j K[j, c]·x[t - j, c]`.
pub fn learned_freq_pattern<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    [decay, omega, phase, mix]: [Var; 4],
    taps: usize,
) -> Var {
    let bank = damped_sine_kernels(g, decay, omega, phase, taps);
    let kernel = g.matmul(bank, mix);
    g.depthwise_conv1d(x, kernel, 0)
}

/// Every rate in `deltas` shifts the sequence axis by a linear phase ramp;
/// the shifted copies are fused by energy-proportional mixing.
pub fn phase_shift<T: Real>(g: &mut Graph<T>, x: Var, deltas: Var, eps: T) -> Var {
    let shifted = g.phase_ramp(x, deltas, 1);
    g.epm(shifted, eps)
}

/// Orthonormal DCT-II, `[m, w]`.
pub fn dct_matrix<T: Real>(m: usize, w: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(m * w);
    for k in 0..m {
        let scale = if k == 0 {
            (1.0 / w as f64).sqrt()
        } else {
            (2.0 / w as f64).sqrt()
        };
        for n in 0..w {
            out.push(scale * (PI * (n as f64 + 0.5) * k as f64 / w as f64).cos());
        }
    }
    Tensor::from_f64(&[m, w], &out)
}

/// A frame is valid when any of its positions is.
pub fn frame_mask(mask: &[u8], batch: usize, len: usize, window: usize, hop: usize) -> Vec<u8> {
    assert!(
        len >= window,
        "frame_mask: length {len} shorter than window {window}"
    );
    let frames = (len - window) / hop + 1;
    let mut out = Vec::with_capacity(batch * frames);
    for b in 0..batch {
        for f in 0..frames {
            let start = b * len + f * hop;
            out.push(mask[start..start + window].iter().any(|&v| v == 1) as u8);
        }
    }
    out
}

/// Frames `[B, L', W, d]`, projected on `m` DCT-II vectors along the window
/// axis, then mapped to `d` by a per-feature basis weight `map[m, d]`.
pub fn freq_basis<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    window: usize,
    hop: usize,
    m: usize,
    map: Var,
    bias: Var,
) -> Var {
    let fr = g.frames(x, window, hop);
    let coef = g.axis_linear(fr, dct_matrix(m, window), 2);
    let weighted = g.mul(coef, map);
    let summed = g.sum_axis(weighted, 2);
    let s = g.shape(summed).to_vec();
    let flat = g.reshape(summed, &[s[0], s[1], s[3]]);
    g.add(flat, bias)
}

/// `[x, sin(2^0·x + φ_0), …, sin(2^{K-1}·x + φ_{K-1})]` along the last axis.
pub fn phase_harmonics<T: Real>(g: &mut Graph<T>, x: Var, phases: Var) -> Var {
    let k = g.shape(phases)[0];
    let axis = g.shape(x).len() - 1;
    let mut parts = vec![x];
    for i in 0..k {
        let phi = g.slice(phases, 0, i, i + 1);
        let scaled = g.scale(x, T::lit((1u64 << i) as f64));
        let arg = g.add(scaled, phi);
        parts.push(g.sin(arg));
    }
    g.concat(&parts, axis)
}

/// Explicit-carrier encoding `sin(ω_i·t + 2π·b_t/256)` with
/// `ω_i = π(i+1)/(d+1)`. Only used to demonstrate carrier cancellation under
/// mean pooling; the model never uses it.
pub fn carrier_encode<T: Real>(bytes: &[u8], batch: usize, len: usize, d: usize) -> Tensor<T> {
    assert_eq!(bytes.len(), batch * len);
    let mut out = Vec::with_capacity(batch * len * d);
    for b in 0..batch {
        for t in 0..len {
            let theta = 2.0 * PI * bytes[b * len + t] as f64 / 256.0;
            for i in 0..d {
                let omega = PI * (i + 1) as f64 / (d + 1) as f64;
                out.push(T::lit((omega * t as f64 + theta).sin()));
            }
        }
    }
    Tensor::new(&[batch, len, d], out)
}
