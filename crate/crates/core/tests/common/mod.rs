#![allow(dead_code)]

use kathleen::config::{ModelConfig, RunConfig, TrainConfig};
use kathleen::data::{Example, Splits};
use kathleen::rng::Rng;

/// `count` strings of one repeated letter, alternating `a` and `z`, random
/// lengths in 16..=64.
pub fn toy(count: usize, seed: u64) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|i| {
            let label = i % 2;
            let len = 16 + rng.below(49);
            let ch = if label == 0 { "a" } else { "z" };
            Example {
                text: ch.repeat(len),
                label,
            }
        })
        .collect()
}

/// 150 / 50 split of [`toy`].
pub fn toy_splits() -> Splits {
    let data = toy(200, 1);
    Splits {
        train: data[..150].to_vec(),
        test: data[150..].to_vec(),
    }
}

pub fn toy_config(epochs: usize) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            max_len: 64,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

pub fn random_bytes(n: usize, rng: &mut Rng) -> Vec<u8> {
    (0..n).map(|_| rng.below(256) as u8).collect()
}

pub fn random_ascii(n: usize, rng: &mut Rng) -> String {
    (0..n).map(|_| (32 + rng.below(95) as u8) as char).collect()
}
