mod common;

use kathleen::channels::scan::{self, ScanDims};
use kathleen::checkpoint;
use kathleen::config::ModelConfig;
use kathleen::data::{batchify, encode_text, ByteBatch, Example};
use kathleen::graph::Graph;
use kathleen::head::{attn_pool, max_pool, mean_pool};
use kathleen::model::Kathleen;
use kathleen::rng::Rng;
use kathleen::tensor::Tensor;
use proptest::prelude::*;

fn scan_case(len: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let dims = ScanDims {
        batch: 2,
        len,
        width: 8,
    };
    let n = 2 * len * 8;
    let gamma: Vec<f32> = (0..n).map(|_| rng.uniform(0.5, 0.999) as f32).collect();
    let v: Vec<f32> = (0..n).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
    let seq = scan::sequential(&gamma, &v, dims).unwrap();
    let par = scan::chunked(&gamma, &v, dims, 16).unwrap();
    let scale = seq.iter().fold(1e-12f64, |m, x| m.max(x.abs() as f64));
    seq.iter()
        .zip(&par)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64))
        / scale
}

fn pooled(z: &[f64], l: usize, d: usize, mask: &[u8], query: &[f64]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let zv = g.constant(Tensor::from_f64(&[1, l, d], z));
    let q = g.constant(Tensor::from_f64(&[d], query));
    let a = attn_pool(&mut g, zv, q, mask);
    let m = max_pool(&mut g, zv, mask);
    let e = mean_pool(&mut g, zv, mask);
    let mut out = g.value(a).data().to_vec();
    out.extend(g.value(m).data());
    out.extend(g.value(e).data());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chunked_scan_matches_sequential(
        len in prop::sample::select(vec![1usize, 15, 16, 17, 64, 256]),
        seed in any::<u64>(),
    ) {
        prop_assert!(scan_case(len, seed) < 1e-5);
    }

    #[test]
    fn epm_of_identical_channels_is_the_channel(
        k in 1usize..5,
        vals in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let mut g = Graph::<f64>::new();
        let stacked: Vec<f64> = (0..k).flat_map(|_| vals.iter().copied()).collect();
        let s = g.constant(Tensor::from_f64(&[k, 1, 3, 4], &stacked));
        let y = g.epm(s, 1e-12);
        for (a, b) in g.value(y).data().iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn epm_stays_within_the_channel_envelope(
        vals in prop::collection::vec(-3.0f64..3.0, 3 * 8),
    ) {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::from_f64(&[3, 1, 2, 4], &vals));
        let y = g.epm(s, 1e-6);
        let out = g.value(y).data().to_vec();
        for (i, v) in out.iter().enumerate() {
            let lo = (0..3).map(|k| vals[k * 8 + i]).fold(f64::INFINITY, f64::min);
            let hi = (0..3).map(|k| vals[k * 8 + i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo.min(0.0) - 1e-12 && *v <= hi.max(0.0) + 1e-12);
        }
    }

    #[test]
    fn pooling_ignores_the_order_of_valid_positions(
        z in prop::collection::vec(-2.0f64..2.0, 6 * 3),
        query in prop::collection::vec(-1.0f64..1.0, 3),
        valid in 1usize..=6,
        perm_seed in any::<u64>(),
    ) {
        let (l, d) = (6, 3);
        let mask: Vec<u8> = (0..l).map(|t| (t < valid) as u8).collect();
        let mut order: Vec<usize> = (0..valid).collect();
        Rng::new(perm_seed).shuffle(&mut order);
        let mut zp = z.clone();
        for (dst, &src) in order.iter().enumerate() {
            zp[dst * d..(dst + 1) * d].copy_from_slice(&z[src * d..(src + 1) * d]);
        }
        let a = pooled(&z, l, d, &mask, &query);
        let b = pooled(&zp, l, d, &mask, &query);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn ascii_round_trip(text in "[ -~]{0,63}") {
        let (bytes, mask, empty) = encode_text(&text, 64);
        let n = mask.iter().filter(|&&m| m == 1).count();
        if text.is_empty() {
            prop_assert!(empty);
            prop_assert_eq!(n, 1);
        } else {
            prop_assert_eq!(std::str::from_utf8(&bytes[..n]).unwrap(), text.as_str());
        }
    }

    #[test]
    fn batch_composition_depends_only_on_the_seed(seed in any::<u64>()) {
        let examples: Vec<Example> = (0..13)
            .map(|i| Example { text: format!("t{i}"), label: i % 2 })
            .collect();
        let a = batchify(&examples, 8, 4, 2, Some(&mut Rng::new(seed))).unwrap();
        let b = batchify(&examples, 8, 4, 2, Some(&mut Rng::new(seed))).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.bytes(), y.bytes());
            prop_assert_eq!(x.labels(), y.labels());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_byte_identical(seed in any::<u64>(), d in 2usize..12) {
        let cfg = ModelConfig { d, ..ModelConfig::tiny() };
        let m = Kathleen::<f32>::new(cfg.clone(), seed).unwrap();
        let bytes = checkpoint::encode(&cfg, &m.params);
        let (cfg2, params) = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&cfg2, &cfg);
        prop_assert_eq!(checkpoint::encode(&cfg2, &params), bytes);
    }

    #[test]
    fn gates_stay_inside_their_bounds(seed in any::<u64>()) {
        let cfg = ModelConfig::default();
        let m = Kathleen::<f32>::new(cfg.clone(), seed).unwrap();
        let mut rng = Rng::new(seed);
        let texts: Vec<String> = (0..4)
            .map(|_| {
                let n = 1 + rng.below(cfg.max_len);
                common::random_ascii(n, &mut rng)
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let batch = ByteBatch::from_texts(&refs, &[0; 4], cfg.max_len, 2).unwrap();
        let (lo, hi) = m.gate_range(&batch).unwrap().unwrap();
        prop_assert!(lo > cfg.gamma_min && hi < cfg.gamma_max, "{lo} {hi}");
    }
}

#[test]
fn frontend_is_finite_on_every_byte_and_random_strings() {
    let cfg = ModelConfig::default();
    let model = Kathleen::<f32>::new(cfg.clone(), 42).unwrap();
    let check = |batch: &ByteBatch| {
        let mut g = Graph::<f32>::new();
        g.set_strict_finite(false);
        let p = model.params.bind(&mut g);
        let out = model.forward(&mut g, &p, batch, None).unwrap();
        assert_eq!(g.nonfinite_count(), 0);
        assert!(g.value(out.hidden).data().iter().all(|v| v.is_finite()));
    };
    let singles: Vec<u8> = (0..=255).collect();
    let batch = ByteBatch::new(singles, vec![1; 256], vec![0; 256], 1, 2).unwrap();
    check(&batch);

    let mut rng = Rng::new(11);
    for _ in 0..20 {
        let mut bytes = Vec::new();
        let mut mask = Vec::new();
        for _ in 0..50 {
            let n = 1 + rng.below(cfg.max_len);
            let mut row = common::random_bytes(n, &mut rng);
            row.resize(cfg.max_len, 0);
            bytes.extend(row);
            mask.extend((0..cfg.max_len).map(|t| (t < n) as u8));
        }
        check(&ByteBatch::new(bytes, mask, vec![0; 50], cfg.max_len, 2).unwrap());
    }
}
