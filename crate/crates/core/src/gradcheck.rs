//! Central finite-difference gradient checks in 64-bit.
//!
//! Perturbed evaluations replay the stop-gradient values recorded by the
//! unperturbed pass, so the tape and the finite differences see the same
//! function. The stop-gradient sites themselves are compared against hand
//! adjoints.

use std::fmt;

use crate::config::ModelConfig;
use crate::data::ByteBatch;
use crate::frontend::dct_matrix;
use crate::graph::{Graph, Var};
use crate::layers;
use crate::model::Kathleen;
use crate::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Options {
    pub step: f64,
    pub threshold: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Tamper with the tape gradient of this tensor (fault injection).
    pub corrupt: Option<String>,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            step: 1e-5,
            threshold: 1e-3,
            floor: 1e-6,
            corrupt: None,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    AdjointPass,
    AdjointFail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::AdjointPass => "SKIPPED-FD/PASS-adjoint",
            Status::AdjointFail => "SKIPPED-FD/FAIL-adjoint",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub status: Status,
}

impl Row {
    pub fn passed(&self) -> bool {
        matches!(self.status, Status::Pass | Status::AdjointPass)
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks the gradient of the one-element output of `build` with respect to
/// every tensor in `store`.
pub fn check_fn<F>(prefix: &str, store: &mut ParamStore<f64>, build: F, opts: &Options) -> Vec<Row>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Var,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let loss = build(&mut g, &bound);
    g.backward(loss);
    let mut grads = store.grads(&g, &bound);
    let log = g.stop_grad_log().clone();
    drop(g);

    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    if let Some(target) = &opts.corrupt {
        for (name, grad) in names.iter().zip(grads.iter_mut()) {
            if name == target {
                *grad = grad.map(|v| v * 1.05 + 1e-4);
            }
        }
    }
    let eval = |store: &ParamStore<f64>| {
        let mut g = Graph::with_frozen_stop_grads(log.clone());
        let bound = store.bind(&mut g);
        let l = build(&mut g, &bound);
        g.value(l).data()[0]
    };

    let mut rows = Vec::new();
    for (name, grad) in names.iter().zip(&grads) {
        let id = store.find(name).expect("name from store");
        let n = store.get(id).numel();
        let mut worst = 0.0f64;
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + opts.step;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = orig - opts.step;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * opts.step);
            worst = worst.max(rel_err(grad.data()[j], fd, opts.floor));
        }
        rows.push(Row {
            name: format!("{prefix}{name}"),
            elements: n,
            max_rel_err: worst,
            status: if worst < opts.threshold {
                Status::Pass
            } else {
                Status::Fail
            },
        });
    }
    rows
}

/// `Σ c ⊙ y` with a fixed pseudo-random `c`, so that every output element
/// contributes a distinct weight.
pub fn probe<T: crate::Real>(g: &mut Graph<T>, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let c = layers::uniform::<T>(&shape, 1.0, &mut Rng::new(0xC0FFEE));
    let c = g.constant(c);
    let w = g.mul(y, c);
    g.sum(w)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_f64(shape, &v)
}

/// Values bounded away from zero, for kinked functions.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.uniform(0.2, 1.5);
            if rng.unit() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v)
}

type OpBuild = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

fn op_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpBuild)> {
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, OpBuild)> = Vec::new();
    let r = |s: &[usize], rng: &mut Rng| uniform(s, -1.0, 1.0, rng);
    cases.push((
        "add",
        vec![r(&[3, 4], rng), r(&[4], rng)],
        Box::new(|g, v| g.add(v[0], v[1])),
    ));
    cases.push((
        "sub",
        vec![r(&[2, 3, 1], rng), r(&[1, 4], rng)],
        Box::new(|g, v| g.sub(v[0], v[1])),
    ));
    cases.push((
        "mul",
        vec![r(&[3, 4], rng), r(&[3, 1], rng)],
        Box::new(|g, v| g.mul(v[0], v[1])),
    ));
    cases.push((
        "div",
        vec![r(&[3, 4], rng), uniform(&[4], 1.0, 2.0, rng)],
        Box::new(|g, v| g.div(v[0], v[1])),
    ));
    cases.push((
        "scale",
        vec![r(&[5], rng)],
        Box::new(|g, v| g.scale(v[0], -1.7)),
    ));
    cases.push((
        "add_scalar",
        vec![r(&[5], rng)],
        Box::new(|g, v| g.add_scalar(v[0], 0.3)),
    ));
    cases.push(("neg", vec![r(&[5], rng)], Box::new(|g, v| g.neg(v[0]))));
    cases.push((
        "matmul",
        vec![r(&[2, 3, 4], rng), r(&[4, 5], rng)],
        Box::new(|g, v| g.matmul(v[0], v[1])),
    ));
    cases.push((
        "sigmoid",
        vec![uniform(&[6], -3.0, 3.0, rng)],
        Box::new(|g, v| g.sigmoid(v[0])),
    ));
    cases.push((
        "tanh",
        vec![uniform(&[6], -2.0, 2.0, rng)],
        Box::new(|g, v| g.tanh(v[0])),
    ));
    cases.push((
        "sin",
        vec![uniform(&[6], -4.0, 4.0, rng)],
        Box::new(|g, v| g.sin(v[0])),
    ));
    cases.push((
        "cos",
        vec![uniform(&[6], -4.0, 4.0, rng)],
        Box::new(|g, v| g.cos(v[0])),
    ));
    cases.push(("exp", vec![r(&[6], rng)], Box::new(|g, v| g.exp(v[0]))));
    cases.push((
        "log",
        vec![uniform(&[6], 0.5, 2.0, rng)],
        Box::new(|g, v| g.log(v[0])),
    ));
    cases.push((
        "abs",
        vec![away_from_zero(&[6], rng)],
        Box::new(|g, v| g.abs(v[0])),
    ));
    cases.push((
        "softplus",
        vec![uniform(&[6], -3.0, 3.0, rng)],
        Box::new(|g, v| g.softplus(v[0])),
    ));
    cases.push((
        "pow",
        vec![uniform(&[5], 0.5, 2.0, rng), uniform(&[1], 0.5, 1.5, rng)],
        Box::new(|g, v| g.pow(v[0], v[1])),
    ));
    cases.push((
        "softmax",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.softmax(v[0], 1)),
    ));
    cases.push((
        "cumsum",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.cumsum(v[0], 1)),
    ));
    cases.push((
        "sum_axis",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.sum_axis(v[0], 2)),
    ));
    cases.push((
        "mean",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.mean(v[0])),
    ));
    cases.push((
        "max_axis",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.max_axis(v[0], 1)),
    ));
    cases.push((
        "concat",
        vec![r(&[2, 2, 3], rng), r(&[2, 3, 3], rng)],
        Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
    ));
    cases.push((
        "stack",
        vec![r(&[2, 3], rng), r(&[2, 3], rng)],
        Box::new(|g, v| g.stack(&[v[0], v[1]])),
    ));
    cases.push((
        "slice",
        vec![r(&[2, 4, 3], rng)],
        Box::new(|g, v| g.slice(v[0], 1, 1, 3)),
    ));
    cases.push((
        "reshape",
        vec![r(&[2, 6], rng)],
        Box::new(|g, v| g.reshape(v[0], &[3, 4])),
    ));
    cases.push((
        "gather",
        vec![r(&[5, 3], rng)],
        Box::new(|g, v| g.gather(v[0], &[0, 4, 4, 2], &[2, 2])),
    ));
    cases.push((
        "phase_ramp",
        vec![r(&[2, 6, 3], rng), uniform(&[3], 0.0, 6.0, rng)],
        Box::new(|g, v| g.phase_ramp(v[0], v[1], 1)),
    ));
    cases.push((
        "phase_ramp_odd",
        vec![r(&[7], rng), uniform(&[4], 0.0, 6.0, rng)],
        Box::new(|g, v| g.phase_ramp(v[0], v[1], 0)),
    ));
    cases.push((
        "depthwise_conv1d",
        vec![r(&[2, 7, 3], rng), r(&[3, 3], rng)],
        Box::new(|g, v| g.depthwise_conv1d(v[0], v[1], 1)),
    ));
    cases.push((
        "depthwise_conv1d_causal",
        vec![r(&[1, 6, 2], rng), r(&[4, 2], rng)],
        Box::new(|g, v| g.depthwise_conv1d(v[0], v[1], 0)),
    ));
    cases.push((
        "frames",
        vec![r(&[2, 9, 3], rng)],
        Box::new(|g, v| g.frames(v[0], 4, 2)),
    ));
    cases.push((
        "axis_linear",
        vec![r(&[2, 3, 4, 2], rng)],
        Box::new(|g, v| g.axis_linear(v[0], dct_matrix(3, 4), 2)),
    ));
    cases.push((
        "linear_scan",
        vec![r(&[2, 9, 3], rng), r(&[2, 9, 3], rng)],
        Box::new(|g, v| {
            g.set_scan_chunk(4);
            let s = g.sigmoid(v[0]);
            let s = g.scale(s, 0.49);
            let gamma = g.add_scalar(s, 0.5);
            g.linear_scan(gamma, v[1])
        }),
    ));
    cases.push((
        "epm",
        vec![r(&[3, 2, 4, 3], rng)],
        Box::new(|g, v| g.epm(v[0], 1e-6)),
    ));
    cases.push((
        "cross_entropy",
        vec![r(&[4, 3], rng)],
        Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 1])),
    ));
    cases
}

/// Every differentiable primitive on small random inputs.
pub fn check_ops(opts: &Options) -> Vec<Row> {
    let mut rng = Rng::new(opts.seed);
    let mut rows = Vec::new();
    for (label, inputs, build) in op_cases(&mut rng) {
        let mut store = ParamStore::new();
        for (i, t) in inputs.into_iter().enumerate() {
            store.add(format!("in{i}"), t);
        }
        let ids: Vec<_> = (0..store.len())
            .map(|i| store.find(&format!("in{i}")).unwrap())
            .collect();
        let f = |g: &mut Graph<f64>, b: &Bound| {
            let vars: Vec<Var> = ids.iter().map(|&id| b[id]).collect();
            let y = build(g, &vars);
            if g.value(y).numel() == 1 && label == "cross_entropy" {
                y
            } else {
                probe(g, y)
            }
        };
        rows.extend(check_fn(&format!("op:{label}."), &mut store, f, opts));
    }
    rows
}

/// [`check_ops`] over `trials` independent input draws, keeping the worst
/// error per row.
pub fn check_ops_trials(opts: &Options, trials: usize) -> Vec<Row> {
    let mut worst: Vec<Row> = Vec::new();
    for t in 0..trials as u64 {
        let o = Options {
            seed: opts.seed.wrapping_add(t.wrapping_mul(0x9e37_79b9)),
            ..opts.clone()
        };
        let rows = check_ops(&o);
        if worst.is_empty() {
            worst = rows;
            continue;
        }
        for (w, r) in worst.iter_mut().zip(rows) {
            if r.max_rel_err > w.max_rel_err || !r.passed() {
                *w = r;
            }
        }
    }
    worst
}

/// Stop-gradient sites against their hand adjoints: the mixing weights of
/// EPM and `detach` are constants, so `∂/∂z_k Σ c⊙EPM(z) = w_k·c`.
pub fn check_stop_gradients(opts: &Options) -> Vec<Row> {
    let mut rng = Rng::new(opts.seed ^ 0x5eed);
    let mut rows = Vec::new();
    for (label, shape) in [
        ("stopgrad:epm.phase_shift", vec![3usize, 2, 16, 8]),
        ("stopgrad:epm.sequencer", vec![4usize, 2, 7, 8]),
    ] {
        let stack = uniform(&shape, -1.0, 1.0, &mut rng);
        let mut g = Graph::<f64>::new();
        let z = g.param(stack.clone());
        let y = g.epm(z, 1e-6);
        let loss = probe(&mut g, y);
        g.backward(loss);
        let tape = g.grad(z).unwrap();

        let c = layers::uniform::<f64>(&shape[1..], 1.0, &mut Rng::new(0xC0FFEE));
        let (k, d) = (shape[0], shape[3]);
        let per = c.numel();
        let positions = per / d;
        let mut worst = 0.0f64;
        for p in 0..positions {
            let energy: Vec<f64> = (0..k)
                .map(|ki| {
                    stack.data()[ki * per + p * d..ki * per + (p + 1) * d]
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
                        / d as f64
                })
                .collect();
            let total: f64 = energy.iter().sum::<f64>() + 1e-6;
            for ki in 0..k {
                let w = energy[ki] / total;
                for j in 0..d {
                    let hand = w * c.data()[p * d + j];
                    let at = ki * per + p * d + j;
                    worst = worst.max(rel_err(tape.data()[at], hand, opts.floor));
                }
            }
        }
        rows.push(Row {
            name: label.to_string(),
            elements: stack.numel(),
            max_rel_err: worst,
            status: if worst < opts.threshold {
                Status::AdjointPass
            } else {
                Status::AdjointFail
            },
        });
    }

    let x = uniform(&[6], -1.0, 1.0, &mut rng);
    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let dx = g.detach(xv);
    let y = g.mul(xv, dx);
    let s = g.sum(y);
    g.backward(s);
    let tape = g.grad(xv).unwrap();
    let worst = tape
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| rel_err(a, b, opts.floor))
        .fold(0.0, f64::max);
    rows.push(Row {
        name: "stopgrad:detach".into(),
        elements: 6,
        max_rel_err: worst,
        status: if worst < opts.threshold {
            Status::AdjointPass
        } else {
            Status::AdjointFail
        },
    });
    rows
}

/// Fixed two-row batch for the end-to-end check; the second row is padded.
pub fn tiny_batch(cfg: &ModelConfig, seed: u64) -> ByteBatch {
    let mut rng = Rng::new(seed);
    let l = cfg.max_len;
    let mut bytes = vec![0u8; 2 * l];
    let mut mask = vec![0u8; 2 * l];
    let valid = [l, l - l / 3];
    for (r, &n) in valid.iter().enumerate() {
        for t in 0..n {
            bytes[r * l + t] = rng.below(256) as u8;
            mask[r * l + t] = 1;
        }
    }
    ByteBatch::new(bytes, mask, vec![0, 1], l, cfg.num_classes).expect("valid batch")
}

/// Tiny model in 64-bit with every all-zero initial tensor (gates, biases,
/// positional bias, phases) replaced by small random values so that no path
/// is trivially dead.
pub fn tiny_model(cfg: &ModelConfig, seed: u64) -> Kathleen<f64> {
    let mut model = Kathleen::<f64>::new(cfg.clone(), seed).expect("valid config");
    let mut rng = Rng::new(seed ^ 0xdead);
    for p in model.params.iter_mut() {
        if p.tensor.data().iter().all(|&v| v == 0.0) {
            p.tensor = layers::uniform(p.tensor.shape(), 0.3, &mut rng);
        }
    }
    model
}

/// End-to-end loss gradient for every parameter tensor of the tiny model.
pub fn check_model(cfg: &ModelConfig, opts: &Options) -> Vec<Row> {
    let model = tiny_model(cfg, opts.seed);
    let batch = tiny_batch(cfg, opts.seed);
    let mut store = model.params.clone();
    let build = |g: &mut Graph<f64>, b: &Bound| {
        let (loss, _) = model.loss(g, b, &batch, None).expect("tiny forward");
        loss
    };
    check_fn("", &mut store, build, opts)
}

/// Ops, stop-gradient sites and the tiny model, in that order.
pub fn run_all(cfg: &ModelConfig, opts: &Options) -> Vec<Row> {
    let mut rows = check_ops(opts);
    rows.extend(check_stop_gradients(opts));
    rows.extend(check_model(cfg, opts));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]));
        let opts = Options {
            corrupt: Some("x".into()),
            ..Options::default()
        };
        let rows = check_fn(
            "",
            &mut store,
            |g, b| {
                let y = g.sin(b[id]);
                g.sum(y)
            },
            &opts,
        );
        assert_eq!(rows[0].status, Status::Fail);
    }

    #[test]
    fn sin_gradient_is_cos() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_f64(&[4], &[0.0, 0.5, 1.0, 3.0]));
        let rows = check_fn(
            "",
            &mut store,
            |g, b| {
                let y = g.sin(b[id]);
                g.sum(y)
            },
            &Options::default(),
        );
        assert!(rows[0].passed(), "{rows:?}");
        assert!(rows[0].max_rel_err < 1e-8);
    }

    #[test]
    fn unfrozen_mixing_weights_differ_from_the_tape() {
        // Without replay the finite differences see the weights move, so
        // they disagree with the stop-gradient tape.
        let stack = uniform(&[2, 1, 3, 4], -1.0, 1.0, &mut Rng::new(3));
        let mut g = Graph::<f64>::new();
        let z = g.param(stack.clone());
        let y = g.epm(z, 1e-6);
        let l = probe(&mut g, y);
        g.backward(l);
        let tape = g.grad(z).unwrap();
        let eval = |t: &Tensor<f64>| {
            let mut g = Graph::<f64>::new();
            let z = g.constant(t.clone());
            let y = g.epm(z, 1e-6);
            let l = probe(&mut g, y);
            g.value(l).data()[0]
        };
        let h = 1e-6;
        let mut worst = 0.0f64;
        for j in 0..stack.numel() {
            let mut up = stack.clone();
            up.data_mut()[j] += h;
            let mut down = stack.clone();
            down.data_mut()[j] -= h;
            let fd = (eval(&up) - eval(&down)) / (2.0 * h);
            worst = worst.max(rel_err(tape.data()[j], fd, 1e-6));
        }
        assert!(worst > 1e-2, "{worst}");
    }
}
