//! Checkpoint serialization.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MSPC"            4 bytes
//! version           u16 (= 1)
//! channels C        u32
//! mixtures K        u32
//! scales M          u8
//! resblocks R       u8
//! grouping id       u8
//! share weights     u8 (0 or 1)
//! seed              u64
//! tensor count      u32
//! per tensor, sorted by name:
//!   name length     u16
//!   name            UTF-8
//!   dims            4 × u32 (N, C, H, W)
//!   values          f32 × N·C·H·W
//! ```
//!
//! The model hash stored in containers is the SHA-256 of these bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grouping::GroupingMethod;
use crate::net::{ModelWeights, NetConfig};
use crate::tensor::{ParamStore, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MSPC";
pub const VERSION: u16 = 1;

pub type ModelHash = [u8; 32];

pub fn to_bytes(model: &ModelWeights) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(64 + 4 * model.params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.channels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.mixtures as u32).to_le_bytes());
    out.push(cfg.scales as u8);
    out.push(cfg.resblocks as u8);
    out.push(cfg.grouping.id());
    out.push(cfg.share_weights as u8);
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let channels = r.u32()? as usize;
    let mixtures = r.u32()? as usize;
    let scales = r.u8()? as usize;
    let resblocks = r.u8()? as usize;
    let grouping = GroupingMethod::from_id(r.u8()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let share_weights = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("bad sharing flag {b}"))),
    };
    let seed = r.u64()?;
    let config = NetConfig {
        channels,
        mixtures,
        resblocks,
        scales,
        grouping,
        share_weights,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let raw = r.take(shape.numel().checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {name}")));
        }
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = ModelWeights { config, seed, params };
    model.validate()?;
    Ok(model)
}

pub fn hash_bytes(bytes: &[u8]) -> ModelHash {
    Sha256::digest(bytes).into()
}

pub fn model_hash(model: &ModelWeights) -> ModelHash {
    hash_bytes(&to_bytes(model))
}

pub fn hex(hash: &ModelHash) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(model: &ModelWeights, path: impl AsRef<Path>) -> Result<ModelHash> {
    let path = path.as_ref();
    let bytes = to_bytes(model);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Loads a checkpoint and returns it with its hash.
pub fn load(path: impl AsRef<Path>) -> Result<(ModelWeights, ModelHash)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((model, hash_bytes(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelWeights {
        ModelWeights::init(NetConfig::new(3, 2, 1, 2, GroupingMethod::Dynamic), 11).unwrap()
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let m = model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.seed, 11);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn hash_changes_with_weights() {
        let m = model();
        let mut other = m.clone();
        other.params.get_mut("s1.in.w").unwrap().data_mut()[0] += 1e-3;
        assert_ne!(model_hash(&m), model_hash(&other));
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = to_bytes(&model());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
