//! The full classifier: frontend, sequencer, head.

use crate::channels::{Sequencer, SequencerOutput};
use crate::config::ModelConfig;
use crate::data::ByteBatch;
use crate::frontend::Frontend;
use crate::graph::{Graph, Var};
use crate::head::Head;
use crate::params::{Bound, ParamStore};
use crate::rng::{streams, Rng};
use crate::tensor::Real;
use crate::Error;

#[derive(Clone, Debug)]
pub struct Kathleen<T: Real> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    frontend: Frontend,
    sequencer: Sequencer,
    head: Head,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Frontend output `H'`.
    pub hidden: Var,
    /// Sequencer output `Z`.
    pub z: Var,
    pub channels: Vec<Var>,
    pub mask: Vec<u8>,
    pub frames: usize,
}

/// Parameters that must have a fixed size in the reference configuration.
pub const STRUCTURAL: [(&str, &str, usize); 3] = [
    ("encoder.wavetable", "encoder", 256),
    ("harmonics.phases", "phase harmonics phases", 6),
    ("reverb.alpha_pos", "positional decay bias", 256),
];

impl<T: Real> Kathleen<T> {
    /// Fresh model; initialization draws from the `INIT` stream of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let mut rng = Rng::stream(seed, streams::INIT);
        let mut params = ParamStore::new();
        let frontend = Frontend::register(&cfg, &mut params, &mut rng);
        let sequencer = Sequencer::register(&cfg, &mut params, &mut rng);
        let head = Head::register(&cfg, &mut params, &mut rng);
        Ok(Kathleen {
            cfg,
            params,
            frontend,
            sequencer,
            head,
        })
    }

    /// Adopts loaded parameters after checking names and shapes against the
    /// layout `cfg` implies.
    pub fn from_params(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self, Error> {
        let mut model = Self::new(cfg, 0)?;
        let mut problems = Vec::new();
        for p in model.params.iter() {
            match params.by_name(&p.name) {
                None => problems.push(format!("{}: missing", p.name)),
                Some(t) if t.shape() != p.tensor.shape() => problems.push(format!(
                    "{}: shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )),
                Some(_) => {}
            }
        }
        for p in params.iter() {
            if model.params.find(&p.name).is_none() {
                problems.push(format!("{}: not part of this architecture", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!(
                "parameters do not match the configuration:\n  {}",
                problems.join("\n  ")
            )));
        }
        for p in model.params.iter_mut() {
            p.tensor = params.by_name(&p.name).expect("checked above").clone();
        }
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> Kathleen<U> {
        Kathleen {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            frontend: self.frontend.clone(),
            sequencer: self.sequencer.clone(),
            head: self.head.clone(),
        }
    }

    pub fn sequencer(&self) -> &Sequencer {
        &self.sequencer
    }

    /// Builds the forward graph. Dropout is active iff `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        batch: &ByteBatch,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardOutput, Error> {
        g.set_scan_chunk(self.cfg.chunk);
        let fe = self
            .frontend
            .forward(&self.cfg, g, p, batch, rng.as_deref_mut())?;
        let SequencerOutput { z, channels, .. } =
            self.sequencer
                .forward(&self.cfg, g, p, fe.hidden, &fe.mask, rng.as_deref_mut())?;
        let logits = self.head.forward(g, p, z, &fe.mask);
        Ok(ForwardOutput {
            logits,
            hidden: fe.hidden,
            z,
            channels,
            mask: fe.mask,
            frames: fe.frames,
        })
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        batch: &ByteBatch,
        rng: Option<&mut Rng>,
    ) -> Result<(Var, ForwardOutput), Error> {
        self.check_labels(batch)?;
        let out = self.forward(g, p, batch, rng)?;
        let loss = g.cross_entropy(out.logits, batch.labels());
        Ok((loss, out))
    }

    fn check_labels(&self, batch: &ByteBatch) -> Result<(), Error> {
        match batch.labels().iter().find(|&&y| y >= self.cfg.num_classes) {
            Some(y) => Err(Error::Data(format!(
                "label {y} out of range for {} classes",
                self.cfg.num_classes
            ))),
            None => Ok(()),
        }
    }

    /// Evaluation-mode logits, row-major `[B, C]`.
    pub fn logits(&self, batch: &ByteBatch) -> Result<Vec<T>, Error> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward(&mut g, &p, batch, None)?;
        Ok(g.value(out.logits).data().to_vec())
    }

    pub fn predict(&self, batch: &ByteBatch) -> Result<Vec<usize>, Error> {
        let logits = self.logits(batch)?;
        let c = self.cfg.num_classes;
        Ok(logits
            .chunks(c)
            .map(|row| (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
            .collect())
    }

    /// Smallest and largest reverb gate value seen on `batch`.
    pub fn gate_range(&self, batch: &ByteBatch) -> Result<Option<(f64, f64)>, Error> {
        let Some(reverb) = &self.sequencer.reverb else {
            return Ok(None);
        };
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let fe = self.frontend.forward(&self.cfg, &mut g, &p, batch, None)?;
        let gamma = reverb.gate(&self.cfg, &mut g, &p, fe.hidden);
        let s = g.shape(gamma).to_vec();
        let d = s[2];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (pos, row) in g.value(gamma).data().chunks(d).enumerate() {
            if fe.mask[pos] == 0 {
                continue;
            }
            for v in row {
                let v = v.to_f64_lossy();
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok(Some((lo, hi)))
    }

    pub fn report(&self) -> ParamReport {
        ParamReport::new(&self.params)
    }
}

/// Itemized parameter counts.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamReport {
    pub tensors: Vec<(String, Vec<usize>, usize)>,
    pub groups: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn new<T: Real>(store: &ParamStore<T>) -> Self {
        let tensors: Vec<(String, Vec<usize>, usize)> = store
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.numel()))
            .collect();
        let mut groups: Vec<(String, usize)> = Vec::new();
        for p in store.iter() {
            match groups.iter_mut().find(|(g, _)| g == p.group()) {
                Some((_, n)) => *n += p.tensor.numel(),
                None => groups.push((p.group().to_string(), p.tensor.numel())),
            }
        }
        ParamReport {
            total: tensors.iter().map(|t| t.2).sum(),
            tensors,
            groups,
        }
    }

    pub fn count_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().find(|t| t.0 == name).map(|t| t.2)
    }

    /// Deviations from the fixed structural sizes.
    pub fn violations(&self) -> Vec<String> {
        STRUCTURAL
            .iter()
            .filter_map(|&(name, label, want)| match self.count_of(name) {
                Some(n) if n == want => None,
                Some(n) => Some(format!(
                    "{label} ({name}) has {n} parameters, expected {want}"
                )),
                None => Some(format!("{label} ({name}) is missing")),
            })
            .collect()
    }
}
