//! Versioned binary parameter container.
//!
//! Layout (all integers little-endian):
//! `b"FPCK"`, `u32` version, `u32` metadata count, then per entry
//! `u32 len + key bytes, u32 len + value bytes`; `u32` record count, then per
//! record `u32 len + name bytes, u32 rank, rank × u64 dims, f32 data`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{RefineConfig, RefineModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("checkpoint {what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "not a checkpoint: magic {magic:?} != {MAGIC:?}"
            )));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32("metadata count")? {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            metadata.insert(k, v);
        }
        let count = r.u32("record count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("record name")?;
            let rank = r.u32("record rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("record shape")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("record `{name}` shape overflows")))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Format(format!("record `{name}` too large")))?,
                "record data",
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint records",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Writes via a sibling temp file so readers never see half a checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, ckpt.encode())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

const MODEL_PREFIX: &str = "model.";

/// Packs parameters plus `model.*` hyperparameters and extra metadata.
pub fn model_to_checkpoint(model: &RefineModel<f32>, extra: &[(&str, String)]) -> Checkpoint {
    let mut metadata = BTreeMap::new();
    for (k, v) in model.config.to_pairs() {
        metadata.insert(format!("{MODEL_PREFIX}{k}"), v);
    }
    for (k, v) in extra {
        metadata.insert((*k).to_string(), v.clone());
    }
    let tensors = model
        .weights
        .entries()
        .into_iter()
        .map(|(n, t)| (n, t.detached()))
        .collect();
    Checkpoint { metadata, tensors }
}

/// Rebuilds a model; every parameter comes back trainable.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<RefineModel<f32>> {
    let pairs: BTreeMap<String, String> = ckpt
        .metadata
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(MODEL_PREFIX).map(|k| (k.to_string(), v.clone())))
        .collect();
    let config = RefineConfig::from_pairs(&pairs)?;
    let mut model = RefineModel::<f32>::new(config, 0)?;
    for (name, p) in model.weights.entries_mut() {
        let t = ckpt
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
        if t.shape() != p.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("`{name}` stored as {:?}, model expects {:?}", t.shape(), p.shape()),
            ));
        }
        *p = t.detached().with_requires_grad(true);
    }
    if ckpt.tensors.len() != model.weights.entries().len() {
        return Err(Error::Format("checkpoint has parameters the model does not know".into()));
    }
    Ok(model)
}
