//! Versioned binary checkpoints.
//!
//! Layout, little-endian throughout:
//! `magic | version u32 | config_len u32 | config JSON | sha256(config) |
//! meta_len u32 | meta JSON | tensor count u32 | manifest | payload`, where
//! each manifest entry is `name_len u16 | name | ndim u8 | dims u64* |
//! offset u64` and the payload holds raw f32 values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::encoder::Model;
use crate::error::{ModelError, Result};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"BLMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Training context stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Players whose documents were used for training.
    pub train_players: Vec<String>,
}

pub fn to_bytes(model: &Model<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let config = model.config.to_json();
    let meta = serde_json::to_string(meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&model.config.digest());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let p = &model.params;
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in p.names.iter().zip(&p.tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    out.reserve(offset as usize);
    for t in &p.tensors {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = r.u32()? as usize;
    let config_json = r.str(n)?;
    let digest = r.take(32)?;
    let config: ModelConfig = serde_json::from_str(config_json)?;
    if config.digest() != digest {
        return Err(ModelError::Checkpoint("config digest mismatch".into()));
    }
    let n = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_str(r.str(n)?)?;
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.str(n)?.to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let payload = &buf[r.pos..];
    let mut params = ParamSet::new();
    let mut expected = 0usize;
    for (name, shape, offset) in manifest {
        let len: usize = shape.iter().product();
        if offset != expected || offset + 4 * len > payload.len() {
            return Err(ModelError::Checkpoint(format!("bad offset for `{name}`")));
        }
        let data = payload[offset..offset + 4 * len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        expected = offset + 4 * len;
        if params.index_of(&name).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        params.push(name, Tensor::new(shape, data)?);
    }
    if expected != payload.len() {
        return Err(ModelError::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((Model::from_params(config, params)?, meta))
}

pub fn save(path: impl AsRef<Path>, model: &Model<f32>, meta: &CheckpointMeta) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&to_bytes(model, meta))?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
