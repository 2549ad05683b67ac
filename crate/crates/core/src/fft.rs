//! Real FFT along an arbitrary tensor axis, built on `rustfft`.
//!
//! Half spectra carry `n / 2 + 1` bins. The inverse treats the imaginary
//! parts of the DC bin (and of the Nyquist bin for even `n`) as zero, which
//! is what makes it the exact inverse of the forward transform on real data.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::tensor::{axis_extents, Real, Tensor};
use crate::Error;

/// Forward/inverse plans for one signal length.
pub struct RealFft<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    buf: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real> RealFft<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "FFT length must be at least 1");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        RealFft {
            n,
            forward,
            inverse,
            buf: vec![Complex::new(T::zero(), T::zero()); n],
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Half spectrum of a real signal of length `n`.
    pub fn forward(&mut self, signal: &[T], out: &mut [Complex<T>]) {
        debug_assert_eq!(signal.len(), self.n);
        debug_assert_eq!(out.len(), self.bins());
        for (b, &x) in self.buf.iter_mut().zip(signal) {
            *b = Complex::new(x, T::zero());
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        out.copy_from_slice(&self.buf[..self.bins()]);
    }

    /// Real signal of length `n` from a half spectrum (normalized by `1/n`).
    pub fn inverse(&mut self, spectrum: &[Complex<T>], out: &mut [T]) {
        let n = self.n;
        let bins = self.bins();
        debug_assert_eq!(spectrum.len(), bins);
        debug_assert_eq!(out.len(), n);
        self.buf[0] = Complex::new(spectrum[0].re, T::zero());
        for k in 1..bins {
            self.buf[k] = spectrum[k];
        }
        if n % 2 == 0 && n > 1 {
            self.buf[n / 2] = Complex::new(spectrum[n / 2].re, T::zero());
        }
        for k in 1..bins {
            if n - k != k {
                self.buf[n - k] = self.buf[k].conj();
            }
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = T::one() / T::lit(n as f64);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }
}

/// Half spectrum of a tensor along one axis. Shape is the input shape with
/// `axis` replaced by `length / 2 + 1`.
#[derive(Clone, Debug)]
pub struct Spectrum<T> {
    pub shape: Vec<usize>,
    pub axis: usize,
    pub length: usize,
    pub bins: Vec<Complex<T>>,
}

pub fn rfft<T: Real>(x: &Tensor<T>, axis: usize) -> Spectrum<T> {
    let (outer, n, inner) = axis_extents(x.shape(), axis);
    let mut plan = RealFft::new(n);
    let nb = plan.bins();
    let mut shape = x.shape().to_vec();
    shape[axis] = nb;
    let mut bins = vec![Complex::new(T::zero(), T::zero()); outer * nb * inner];
    let mut lane = vec![T::zero(); n];
    let mut spec = vec![Complex::new(T::zero(), T::zero()); nb];
    let data = x.data();
    for o in 0..outer {
        for i in 0..inner {
            for (t, v) in lane.iter_mut().enumerate() {
                *v = data[(o * n + t) * inner + i];
            }
            plan.forward(&lane, &mut spec);
            for (k, s) in spec.iter().enumerate() {
                bins[(o * nb + k) * inner + i] = *s;
            }
        }
    }
    Spectrum {
        shape,
        axis,
        length: n,
        bins,
    }
}

pub fn irfft<T: Real>(spec: &Spectrum<T>, axis: usize, length: usize) -> Result<Tensor<T>, Error> {
    if axis != spec.axis || length / 2 + 1 != spec.shape[axis] {
        return Err(Error::Shape(format!(
            "irfft: spectrum with {} bins on axis {} cannot produce length {} on axis {}",
            spec.shape[spec.axis], spec.axis, length, axis
        )));
    }
    let (outer, nb, inner) = axis_extents(&spec.shape, axis);
    let mut plan = RealFft::new(length);
    let mut shape = spec.shape.clone();
    shape[axis] = length;
    let mut out = vec![T::zero(); outer * length * inner];
    let mut half = vec![Complex::new(T::zero(), T::zero()); nb];
    let mut lane = vec![T::zero(); length];
    for o in 0..outer {
        for i in 0..inner {
            for (k, h) in half.iter_mut().enumerate() {
                *h = spec.bins[(o * nb + k) * inner + i];
            }
            plan.inverse(&half, &mut lane);
            for (t, v) in lane.iter().enumerate() {
                out[(o * length + t) * inner + i] = *v;
            }
        }
    }
    Ok(Tensor::new(&shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_signal_is_pure_dc() {
        let c = 1.5f64;
        let x = Tensor::new(&[4], vec![c; 4]);
        let s = rfft(&x, 0);
        assert_eq!(s.bins.len(), 3);
        assert!((s.bins[0].re - 4.0 * c).abs() < 1e-12);
        assert!(s.bins[0].im.abs() < 1e-12);
        for b in &s.bins[1..] {
            assert!(b.norm() < 1e-12);
        }
    }

    #[test]
    fn single_tone_lands_in_bin_one() {
        let x: Vec<f64> = (0..8)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 8.0).sin())
            .collect();
        let s = rfft(&Tensor::new(&[8], x), 0);
        let energy: Vec<f64> = s.bins.iter().map(|b| b.norm_sqr()).collect();
        let total: f64 = energy.iter().sum();
        assert!(energy[1] / total > 1.0 - 1e-12);
    }

    #[test]
    fn round_trip_identity_for_assorted_lengths() {
        let mut rng = Rng::new(7);
        for n in [1usize, 2, 7, 16, 256] {
            let data: Vec<f32> = (0..3 * n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let x = Tensor::new(&[3, n], data);
            let back = irfft(&rfft(&x, 1), 1, n).unwrap();
            let rel = x.max_abs_diff(&back) / x.max_abs().max(1e-30);
            assert!(rel < 1e-5, "n={n} rel={rel}");
        }
    }

    #[test]
    fn inner_axis_transform_matches_lane_transform() {
        let mut rng = Rng::new(3);
        let data: Vec<f64> = (0..2 * 6 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::new(&[2, 6, 3], data.clone());
        let s = rfft(&x, 1);
        let lane: Vec<f64> = (0..6).map(|t| data[(6 + t) * 3 + 2]).collect();
        let s_lane = rfft(&Tensor::new(&[6], lane), 0);
        for k in 0..4 {
            let a = s.bins[(4 + k) * 3 + 2];
            assert!((a - s_lane.bins[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_rejects_mismatched_length() {
        let x = Tensor::<f64>::zeros(&[8]);
        let s = rfft(&x, 0);
        assert!(irfft(&s, 0, 12).is_err());
        assert!(irfft(&s, 0, 9).is_ok());
    }
}
