//! Forward-pass timing and peak heap use against sequence length.
//!
//! Peak memory comes from [`CountingAlloc`]; it only reports non-zero values
//! in binaries that install it as the global allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::ByteBatch;
use crate::graph::Graph;
use crate::model::Kathleen;
use crate::rng::Rng;
use crate::training::mean_std;
use crate::Error;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

/// System allocator that tracks live and peak heap bytes.
pub struct CountingAlloc;

fn grow(n: usize) {
    let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size > layout.size() {
                grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Resets the peak to the current live size and returns that size.
pub fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

pub fn peak() -> usize {
    PEAK.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub length: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Less sensitive to scheduler noise than the mean; used for ratios.
    pub median_ms: f64,
    /// Heap growth above the pre-run baseline.
    pub peak_bytes: usize,
}

/// `cfg` adjusted so that every length in `lengths` fits.
pub fn config_for(cfg: &ModelConfig, lengths: &[usize]) -> Result<ModelConfig, Error> {
    let longest = lengths.iter().copied().max().unwrap_or(cfg.max_len);
    if let Some(&short) = lengths.iter().find(|&&l| l < cfg.window) {
        return Err(Error::Config(format!(
            "bench length {short} is shorter than the window ({})",
            cfg.window
        )));
    }
    let mut out = cfg.clone();
    out.max_len = longest;
    out.l_max = out.l_max.max(cfg.frames_for(longest));
    out.dropout = 0.0;
    out.validate()?;
    Ok(out)
}

/// Times `repeat` passes per length after one warm-up pass, on a single
/// random byte sequence.
pub fn run(
    model: &Kathleen<f32>,
    lengths: &[usize],
    repeat: usize,
    backward: bool,
    seed: u64,
) -> Result<Vec<BenchRow>, Error> {
    let mut rng = Rng::new(seed);
    let mut rows = Vec::new();
    for &len in lengths {
        if len < model.cfg.window {
            return Err(Error::Config(format!(
                "bench length {len} is shorter than the window ({})",
                model.cfg.window
            )));
        }
        let bytes: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
        let batch = ByteBatch::new(bytes, vec![1; len], vec![0], len, model.cfg.num_classes)?;
        let pass = |model: &Kathleen<f32>| -> Result<(), Error> {
            let mut g = Graph::<f32>::new();
            let p = model.params.bind(&mut g);
            if backward {
                let (loss, _) = model.loss(&mut g, &p, &batch, None)?;
                g.backward(loss);
            } else {
                model.forward(&mut g, &p, &batch, None)?;
            }
            Ok(())
        };
        pass(model)?;
        let base = reset_peak();
        let mut times = Vec::with_capacity(repeat);
        for _ in 0..repeat.max(1) {
            let t = Instant::now();
            pass(model)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let (mean_ms, std_ms) = mean_std(&times);
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median_ms = if times.len() % 2 == 1 {
            times[mid]
        } else {
            0.5 * (times[mid - 1] + times[mid])
        };
        rows.push(BenchRow {
            length: len,
            mean_ms,
            std_ms,
            median_ms,
            peak_bytes: peak().saturating_sub(base),
        });
    }
    Ok(rows)
}

/// Successive median-time and memory ratios `(L₁, L₂, t₂/t₁, m₂/m₁)`.
pub fn ratios(rows: &[BenchRow]) -> Vec<(usize, usize, f64, f64)> {
    rows.windows(2)
        .map(|w| {
            (
                w[0].length,
                w[1].length,
                w[1].median_ms / w[0].median_ms,
                w[1].peak_bytes as f64 / w[0].peak_bytes.max(1) as f64,
            )
        })
        .collect()
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("length,mean_ms,std_ms,peak_bytes\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.3},{:.3},{}\n",
            r.length, r.mean_ms, r.std_ms, r.peak_bytes
        ));
    }
    s
}
