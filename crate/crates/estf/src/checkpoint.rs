//! Parameter checkpoints.
//!
//! ```text
//! "ESTF"  u32 version
//! u32 n   n bytes of run configuration text (see `config`)
//! u32 arrays
//! arrays × { u16 len  name  u8 rank  rank × u32 dim  f64 values… }
//! ```
//!
//! All integers and floats little-endian. Arrays appear in the model's
//! parameter order and must match the shapes the configuration implies.

use std::path::Path;

use estf_core::model::{init_params, Params};
use estf_core::params::ParamGroup;

use crate::config::RunConfig;
use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"ESTF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: Params,
}

pub fn encode(config: &RunConfig, params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = config.to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let named = params.named_tensors();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = c.u32("config length")? as usize;
    let text =
        std::str::from_utf8(c.take(n, "config")?).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
    let config = RunConfig::parse(text)?;
    let mut params = init_params(&config.model, 0)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = c.u32("array count")? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!("{count} arrays, configuration implies {}", expected.len())));
    }
    for ((name, shape), t) in expected.iter().zip(params.tensors_mut()) {
        let len = c.u16("name length")? as usize;
        let got = c.take(len, "name")?;
        if got != name.as_bytes() {
            return Err(Error::Format(format!("array {:?} where {name} was expected", String::from_utf8_lossy(got))));
        }
        let rank = c.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dimension")? as usize);
        }
        if &dims != shape {
            return Err(Error::Format(format!("{name} has shape {dims:?}, expected {shape:?}")));
        }
        let raw = c.take(t.len() * 8, name)?;
        for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Checkpoint { config, params })
}

pub fn save(path: &Path, config: &RunConfig, params: &Params) -> Result<()> {
    error::write(path, &encode(config, params))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&error::read(path)?).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use estf_core::model::ModelConfig;

    #[test]
    fn round_trip_is_byte_exact() {
        let config = RunConfig { model: ModelConfig::toy(), ..Default::default() };
        let mut params = init_params(&config.model, 3).unwrap();
        params.temporal_pos.data_mut()[5] = -0.0;
        params.head.fc2.bias.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let bytes = encode(&config, &params);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(encode(&back.config, &back.params), bytes);
    }

    #[test]
    fn rejects_damage() {
        let config = RunConfig { model: ModelConfig::toy(), ..Default::default() };
        let bytes = encode(&config, &init_params(&config.model, 0).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
    }
}
