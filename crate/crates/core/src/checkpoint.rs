//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "KATH"  u32 version  u32 config_len  config_len bytes of model config (TOML)
//! repeated until end of file:
//!   u32 name_len  name (UTF-8)  u32 rank  rank × u32 dims  numel × f32
//! ```

use std::path::Path;

use crate::config::{model_from_text, model_to_text, ModelConfig};
use crate::model::Kathleen;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Error;

pub const MAGIC: &[u8; 4] = b"KATH";
pub const VERSION: u32 = 1;

pub fn encode(cfg: &ModelConfig, params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = model_to_text(cfg);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], Error> {
        if self.buf.len() - self.at < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: {what} needs {n} bytes at offset {}",
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, Error> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore<f32>), Error> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let cfg = model_from_text(text)?;
    let mut params = ParamStore::new();
    while !r.done() {
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        params.add(name, Tensor::new(&shape, data));
    }
    Ok((cfg, params))
}

pub fn save(path: &Path, model: &Kathleen<f32>) -> Result<(), Error> {
    std::fs::write(path, encode(&model.cfg, &model.params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Kathleen<f32>, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cfg, params) = decode(&bytes)?;
    Kathleen::from_params(cfg, params)
}
