//! AdamW with cosine annealing, the epoch loop, and evaluation.

use std::time::Instant;

use serde::Serialize;

use crate::config::{ModelConfig, RunConfig, TrainConfig};
use crate::data::{batchify, stream_batches, Example, Splits};
use crate::graph::Graph;
use crate::model::{Kathleen, ParamReport};
use crate::params::ParamStore;
use crate::rng::{streams, Rng};
use crate::tensor::{Real, Tensor};
use crate::Error;

/// `0.5·(1 + cos(π·step/total))`.
pub fn cosine_factor(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let x = (step.min(total) as f64) / total as f64;
    0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW<T: Real> {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    /// Steps skipped because a gradient was not finite.
    pub skipped: usize,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        AdamW {
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect(),
            v: params
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect(),
            t: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`. Returns `false` (and leaves the
    /// parameters alone) when any gradient is NaN or infinite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> bool {
        assert_eq!(
            grads.len(),
            self.m.len(),
            "adamw: one gradient per parameter"
        );
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        true
    }
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

pub fn evaluate(
    model: &Kathleen<f32>,
    examples: &[Example],
    batch_size: usize,
) -> Result<EvalReport, Error> {
    let c = model.cfg.num_classes;
    let mut confusion = vec![vec![0usize; c]; c];
    let batches = batchify(examples, model.cfg.max_len, batch_size, c, None)?;
    let mut correct = 0;
    for batch in &batches {
        let pred = model.predict(batch)?;
        for (&y, &p) in batch.labels().iter().zip(&pred) {
            confusion[y][p] += 1;
            correct += (y == p) as usize;
        }
    }
    let count = examples.len();
    Ok(EvalReport {
        accuracy: if count == 0 {
            0.0
        } else {
            correct as f64 / count as f64
        },
        confusion,
        count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub last_test_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub params: ParamReport,
    pub skipped_steps: usize,
    pub empty_texts: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub report: RunReport,
    /// Parameters from the epoch with the best test accuracy.
    pub best: Kathleen<f32>,
    pub last: Kathleen<f32>,
}

fn divergence_dump(
    store: &ParamStore<f32>,
    grads: &[Tensor<f32>],
    epoch: usize,
    step: usize,
) -> String {
    let mut s = format!("loss is not finite at epoch {epoch}, step {step}; gradient norms:");
    for (p, g) in store.iter().zip(grads) {
        s.push_str(&format!("\n  {:<24} {:.6e}", p.name, g.l2_norm()));
    }
    s
}

/// Trains one seed. `on_epoch` sees each epoch report as soon as it exists.
pub fn train(
    cfg: &RunConfig,
    splits: &Splits,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    let started = Instant::now();
    let mcfg: &ModelConfig = &cfg.model;
    let tcfg = &cfg.train;
    let mut model = Kathleen::<f32>::new(mcfg.clone(), seed)?;
    let mut opt = AdamW::new(&model.params, tcfg);
    let mut shuffle = Rng::stream(seed, streams::SHUFFLE);
    let mut drop_rng = Rng::stream(seed, streams::DROPOUT);
    let per_epoch = splits.train.len().div_ceil(tcfg.batch_size);
    let total = per_epoch * tcfg.epochs;
    let mut step = 0;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Kathleen<f32>, Vec<Vec<usize>>)> = None;
    let mut empty_texts = 0;

    for epoch in 1..=tcfg.epochs {
        let t0 = Instant::now();
        let batches = batchify(
            &splits.train,
            mcfg.max_len,
            tcfg.batch_size,
            mcfg.num_classes,
            Some(&mut shuffle),
        )?;
        if epoch == 1 {
            empty_texts = batches.iter().map(|b| b.empty_rows).sum();
        }
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = tcfg.lr;
        for batch in stream_batches(batches, 2) {
            let mut g = Graph::<f32>::new();
            g.set_strict_finite(false);
            let p = model.params.bind(&mut g);
            let (loss, out) = model.loss(&mut g, &p, &batch, Some(&mut drop_rng))?;
            let lv = g.value(loss).data()[0] as f64;
            g.backward(loss);
            let mut grads = model.params.grads(&g, &p);
            if !lv.is_finite() {
                return Err(Error::Divergence(divergence_dump(
                    &model.params,
                    &grads,
                    epoch,
                    step,
                )));
            }
            let c = mcfg.num_classes;
            for (row, &y) in g.value(out.logits).data().chunks(c).zip(batch.labels()) {
                let pred = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                correct += (pred == y) as usize;
            }
            drop(g);
            if tcfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, tcfg.clip_norm);
            }
            lr = tcfg.lr * cosine_factor(step, total);
            opt.step(&mut model.params, &grads, lr);
            loss_sum += lv * batch.batch() as f64;
            seen += batch.batch();
            step += 1;
        }
        let last_epoch = epoch == tcfg.epochs;
        let eval = if tcfg.eval_every_epoch || last_epoch {
            Some(evaluate(&model, &splits.test, tcfg.batch_size)?)
        } else {
            None
        };
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            test_accuracy: eval.as_ref().map(|e| e.accuracy),
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        if let Some(e) = eval {
            if best.as_ref().is_none_or(|b| e.accuracy > b.0) {
                best = Some((e.accuracy, epoch, model.clone(), e.confusion));
            }
        }
        epochs.push(report);
    }
    let (best_acc, best_epoch, best_model, confusion) =
        best.expect("last epoch is always evaluated");
    let report = RunReport {
        seed,
        best_epoch,
        best_test_accuracy: best_acc,
        last_test_accuracy: epochs.last().and_then(|e| e.test_accuracy).unwrap_or(0.0),
        epochs,
        confusion,
        params: model.report(),
        skipped_steps: opt.skipped,
        empty_texts,
        train_size: splits.train.len(),
        test_size: splits.test.len(),
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        report,
        best: best_model,
        last: model,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(&[1], &[v]));
        s
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_factor(0, 10), 1.0);
        assert!((cosine_factor(5, 10) - 0.5).abs() < 1e-15);
        assert!(cosine_factor(10, 10).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&s, &cfg);
        for _ in 0..3 {
            opt.step(&mut s, &[Tensor::zeros(&[1])], 1e-2);
        }
        assert_eq!(s.by_name("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn three_step_trace_matches_hand_computation() {
        let (lr, wd, b1, b2, eps): (f64, f64, f64, f64, f64) = (0.1, 0.01, 0.9, 0.999, 1e-8);
        let grads = [0.5, -0.25, 1.0];
        let mut s = scalar_store(1.0);
        let cfg = TrainConfig {
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            adam_eps: eps,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&s, &cfg);
        for &g in &grads {
            opt.step(&mut s, &[Tensor::from_f64(&[1], &[g])], lr);
        }
        // step 1: m=0.05 v=0.00025 mhat=0.5 vhat=0.25
        let w1 = 1.0 * (1.0 - lr * wd) - lr * 0.5 / (0.5 + eps);
        let m2 = 0.9 * 0.05 + 0.1 * -0.25;
        let v2: f64 = 0.999 * 0.00025 + 0.001 * 0.0625;
        let w2 = w1 * (1.0 - lr * wd)
            - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + eps);
        let m3 = 0.9 * m2 + 0.1 * 1.0;
        let v3: f64 = 0.999 * v2 + 0.001 * 1.0;
        let w3 = w2 * (1.0 - lr * wd)
            - lr * (m3 / (1.0 - 0.729)) / ((v3 / (1.0 - 0.997002999)).sqrt() + eps);
        let got = s.by_name("w").unwrap().data()[0];
        assert!((got - w3).abs() < 1e-12, "{got} vs {w3}");
    }

    #[test]
    fn nan_gradient_skips_the_step() {
        let mut s = scalar_store(0.3);
        let mut opt = AdamW::new(&s, &TrainConfig::default());
        assert!(!opt.step(&mut s, &[Tensor::from_f64(&[1], &[f64::NAN])], 0.1));
        assert_eq!(opt.skipped, 1);
        assert_eq!(opt.steps(), 0);
        assert_eq!(s.by_name("w").unwrap().data()[0], 0.3);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut g = vec![
            Tensor::<f64>::from_f64(&[2], &[3.0, 0.0]),
            Tensor::from_f64(&[1], &[4.0]),
        ];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
