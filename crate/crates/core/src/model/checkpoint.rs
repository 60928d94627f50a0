//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `TRANCEPT`, format version `u32`, model
//! config as TOML (`u32` length + bytes), free-form metadata text (`u32`
//! length + bytes), training step `u64`, parameter count `u32`, then per
//! parameter: name (`u16` length + bytes), rank `u8`, dims `u64` each, and
//! `f64` data. A SHA-256 digest of everything before it closes the file.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, TranceptionModel};
use crate::nn::Tensor;
use crate::seq::VOCAB_SIZE;

const MAGIC: &[u8; 8] = b"TRANCEPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A model plus the training state needed to resume or audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TranceptionModel,
    pub step: u64,
    /// Opaque text, typically the training config as TOML.
    pub metadata: String,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for text in [ckpt.model.config().to_toml(), ckpt.metadata.clone()] {
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    let model = &ckpt.model;
    out.extend_from_slice(&(model.parameters().len() as u32).to_le_bytes());
    for (name, t) in model.parameter_names().iter().zip(model.parameters()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn text(&mut self, len: usize) -> Result<String, ModelError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::Checksum);
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32()? as usize;
    let config_text = r.text(len)?;
    let config: ModelConfig =
        toml::from_str(&config_text).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
    if config.vocab_size != VOCAB_SIZE {
        return Err(ModelError::Checkpoint(format!(
            "vocabulary size {} does not match the amino-acid vocabulary ({VOCAB_SIZE})",
            config.vocab_size
        )));
    }
    let len = r.u32()? as usize;
    let metadata = r.text(len)?;
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = r.text(len)?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| ModelError::Checkpoint("bad shape".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    let model = TranceptionModel::from_parameters(config, named)?;
    Ok(Checkpoint { model, step, metadata })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}
