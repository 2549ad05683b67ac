//! Run configuration: model architecture, optimization, dataset.
//!
//! The file format is TOML with three tables, `[model]`, `[train]` and
//! `[data]`. Every key is optional (defaults below); unknown keys are
//! rejected so that typos cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width.
    pub d: usize,
    pub num_classes: usize,
    /// Byte sequence length (truncate / pad).
    pub max_len: usize,
    /// Byte `b` rotates the wavetable by `b·d/shift_denominator` samples.
    pub shift_denominator: usize,
    pub freq_filters: usize,
    pub freq_kernel: usize,
    pub phase_shifts: usize,
    pub window: usize,
    pub hop: usize,
    pub basis: usize,
    pub harmonics: usize,
    /// Length of the positional decay bias (frame positions).
    pub l_max: usize,
    pub chunk: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub psi_iterations: usize,
    pub psi_alpha: f64,
    pub psi_scale: f64,
    /// Initial consonance gate (see `channels::psi`).
    pub consonance_gate_init: f64,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub epm_eps: f64,
    pub reverb: bool,
    pub conv: bool,
    pub consonance: bool,
    pub dissonance: bool,
    pub pooling: Pooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Dual,
    Mean,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 256,
            num_classes: 2,
            max_len: 256,
            shift_denominator: 256,
            freq_filters: 16,
            freq_kernel: 32,
            phase_shifts: 8,
            window: 8,
            hop: 4,
            basis: 8,
            harmonics: 6,
            l_max: 256,
            chunk: 16,
            gamma_min: 0.50,
            gamma_max: 0.999,
            psi_iterations: 4,
            psi_alpha: 0.3,
            psi_scale: 1.0,
            consonance_gate_init: 1e-3,
            conv_kernel: 5,
            dropout: 0.10,
            epm_eps: 1e-6,
            reverb: true,
            conv: true,
            consonance: true,
            dissonance: true,
            pooling: Pooling::Dual,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks (d = 8).
    pub fn tiny() -> Self {
        ModelConfig {
            d: 8,
            max_len: 16,
            freq_filters: 3,
            freq_kernel: 4,
            phase_shifts: 3,
            window: 4,
            hop: 2,
            basis: 3,
            l_max: 16,
            chunk: 4,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Number of frames produced for a byte sequence of length `len`.
    pub fn frames_for(&self, len: usize) -> usize {
        (len.max(self.window) - self.window) / self.hop + 1
    }

    pub fn validate(&self) -> Result<(), Error> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 {
            return fail("model.d must be positive");
        }
        if self.num_classes < 2 {
            return fail("model.num_classes must be at least 2");
        }
        if self.max_len == 0 {
            return fail("model.max_len must be positive");
        }
        if self.shift_denominator == 0 {
            return fail("model.shift_denominator must be positive");
        }
        if self.freq_filters == 0 || self.freq_kernel == 0 {
            return fail("model.freq_filters and model.freq_kernel must be positive");
        }
        if self.phase_shifts == 0 {
            return fail("model.phase_shifts must be positive");
        }
        if self.window == 0 || self.hop == 0 || self.hop > self.window {
            return fail("sliding window requires window >= 1 and 1 <= hop <= window");
        }
        if self.basis == 0 || self.basis > self.window {
            return fail("model.basis must be in 1..=window");
        }
        if self.chunk == 0 {
            return fail("model.chunk must be positive");
        }
        if !(0.0 < self.gamma_min && self.gamma_min < self.gamma_max && self.gamma_max < 1.0) {
            return fail("reverb gate bounds must satisfy 0 < gamma_min < gamma_max < 1");
        }
        if self.psi_scale <= 0.0 {
            return fail("model.psi_scale must be positive");
        }
        if self.conv_kernel % 2 == 0 {
            return fail("model.conv_kernel must be odd");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("model.dropout must be in [0, 1)");
        }
        if self.epm_eps <= 0.0 {
            return fail("model.epm_eps must be positive");
        }
        if self.frames_for(self.max_len) > self.l_max {
            return Err(Error::Config(format!(
                "max_len {} yields {} frames, more than l_max {}",
                self.max_len,
                self.frames_for(self.max_len),
                self.l_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    /// Evaluate on the test split after every epoch.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 0.0,
            seed: 42,
            seeds: vec![42, 123, 456],
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config("train rates must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Tsv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub format: DataFormat,
    pub text_field: String,
    pub label_field: String,
    /// Class names in label order. Labels in the file may be the integer
    /// index or the name itself.
    pub class_names: Vec<String>,
    /// Keep at most this many training rows (0 = all), chosen by a seeded
    /// shuffle so the subset is class-balanced in expectation.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Exact row counts to enforce after loading (0 = unchecked).
    pub expect_train: usize,
    pub expect_test: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_path: PathBuf::from("data/train.csv"),
            test_path: PathBuf::from("data/test.csv"),
            format: DataFormat::Csv,
            text_field: "text".into(),
            label_field: "label".into(),
            class_names: vec!["0".into(), "1".into()],
            train_limit: 0,
            test_limit: 0,
            expect_train: 0,
            expect_test: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative dataset paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.train_path, &mut cfg.data.test_path] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.class_names.len() != self.model.num_classes {
            return Err(Error::Config(format!(
                "data.class_names has {} entries but model.num_classes is {}",
                self.data.class_names.len(),
                self.model.num_classes
            )));
        }
        Ok(())
    }
}

pub fn model_to_text(cfg: &ModelConfig) -> String {
    toml::to_string(cfg).expect("model config serializes")
}

pub fn model_from_text(text: &str) -> Result<ModelConfig, Error> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
