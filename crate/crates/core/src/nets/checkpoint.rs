//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! `b"GCBFCKPT"`, `u32` version, model name (`u32` length + UTF-8), `f64` scale,
//! `u64` step, `u32` slot count, then per slot: name (`u32` length + UTF-8),
//! `u32` rank, `u64` per dimension, and the `f64` data.

use std::path::Path;

use super::{init, GcbfNet, PolicyNet};
use crate::autodiff::Tensor;
use crate::dynamics::ModelKind;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCBFCKPT";
const VERSION: u32 = 1;

/// Both networks plus the metadata needed to rebuild them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub scale: f64,
    pub step: u64,
    pub gcbf: GcbfNet,
    pub policy: PolicyNet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, self.model.name());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let stores = [&self.gcbf.params, &self.policy.params];
        let count: usize = stores.iter().map(|s| s.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for store in stores {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                put_str(&mut out, name);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for d in t.shape() {
                    out.extend_from_slice(&(*d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let name = r.string()?;
        let model = ModelKind::from_name(&name).ok_or_else(|| Error::Checkpoint(format!("unknown model {name:?}")))?;
        let scale = r.f64()?;
        let step = r.u64()?;
        let (mut gcbf, mut policy) = init(model, 0, scale)?;
        let count = r.u32()? as usize;
        let expected = gcbf.params.len() + policy.params.len();
        if count != expected {
            return Err(Error::Checkpoint(format!("expected {expected} slots, found {count}")));
        }
        let n_h = gcbf.params.len();
        for k in 0..count {
            let (store, idx) = if k < n_h { (&mut gcbf.params, k) } else { (&mut policy.params, k - n_h) };
            let name = r.string()?;
            if store.names()[idx] != name {
                return Err(Error::Checkpoint(format!("slot {k}: expected {:?}, found {name:?}", store.names()[idx])));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let slot = &mut store.tensors_mut()[idx];
            if shape != slot.shape() {
                return Err(Error::Checkpoint(format!("slot {name}: shape {shape:?}, expected {:?}", slot.shape())));
            }
            let data = (0..slot.numel()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            *slot = Tensor::new(shape, data);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last slot".into()));
        }
        Ok(Checkpoint { model, scale, step, gcbf, policy })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    match std::fs::read(path) {
        Ok(bytes) => Checkpoint::from_bytes(&bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingCheckpoint(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("slot name is not UTF-8".into()))
    }
}
