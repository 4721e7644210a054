//! Binary checkpoint: magic, format version, model config, named `f64`
//! tensors and string metadata. All integers are little-endian.
//!
//! ```text
//! b"ESSCKPT\0" u32 version
//! u32 len, config text ("key=value" lines)
//! u32 count, then per tensor: u32 name len, name, u32 rank, u32 dims.., f64 values..
//! u32 len, metadata text ("key=value" lines)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{EssModel, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"ESSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<f64>>,
    pub meta: BTreeMap<String, String>,
}

fn kv_text<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<String> {
    let mut s = String::new();
    for (k, v) in pairs {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("metadata entry {k:?} cannot be stored")));
        }
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    Ok(s)
}

fn parse_kv(text: &str) -> Result<Vec<(&str, &str)>> {
    text.lines()
        .map(|l| l.split_once('=').ok_or_else(|| Error::Checkpoint(format!("malformed entry {l:?}"))))
        .collect()
}

impl Checkpoint {
    pub fn new(model: ModelConfig) -> Self {
        Checkpoint {
            model,
            tensors: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let pairs = self.model.to_pairs();
        let cfg = kv_text(pairs.iter().map(|(k, v)| (*k, v.as_str())))?;
        put_bytes(&mut out, cfg.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = kv_text(self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        put_bytes(&mut out, meta.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let cfg = r.text()?;
        let model = ModelConfig::from_pairs(parse_kv(cfg)?)
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.text()?.to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.insert(name, Tensor::from_vec(&shape, data)?);
        }
        let meta = parse_kv(r.text()?)?
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { model, tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        // write-then-rename keeps the previous checkpoint intact on failure
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn meta_value<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {key:?} has invalid value {raw:?}")))
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

impl<T: Scalar> EssModel<T> {
    /// Snapshot of every parameter, by name.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(*self.config());
        for id in self.store().ids() {
            ck.tensors
                .insert(self.store().name(id).to_string(), self.store().get(id).cast());
        }
        ck
    }

    /// Loads every parameter from a checkpoint with an identical config.
    /// Entries that are not parameters of this model are ignored.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.model != *self.config() {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {:?} does not match model config {:?}",
                ck.model,
                self.config()
            )));
        }
        let names: Vec<String> = self.store().ids().map(|id| self.store().name(id).to_string()).collect();
        for name in names {
            let t = ck
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
            self.store_mut()
                .set(&name, t.cast())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut m = EssModel::new(ck.model, 0)?;
        m.load_checkpoint(ck)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetGroup;

    #[test]
    fn round_trip_is_exact() {
        let m: EssModel<f32> = EssModel::new(ModelConfig::default(), 9).unwrap();
        let mut ck = m.to_checkpoint();
        ck.meta.insert("iteration".into(), "12".into());
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_value::<u64>("iteration").unwrap(), 12);
        let m2: EssModel<f32> = EssModel::from_checkpoint(&back).unwrap();
        for g in NetGroup::ALL {
            assert_eq!(m.store().group_bytes(g), m2.store().group_bytes(g));
        }
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let m: EssModel<f32> = EssModel::new(ModelConfig::default(), 9).unwrap();
        let ck = m.to_checkpoint();
        let other = ModelConfig {
            classes: 11,
            ..ModelConfig::default()
        };
        let mut m2: EssModel<f32> = EssModel::new(other, 9).unwrap();
        assert!(matches!(m2.load_checkpoint(&ck), Err(Error::Checkpoint(_))));
        let mut bytes = ck.encode().unwrap();
        bytes[8] = 99;
        assert!(Checkpoint::decode(&bytes).is_err());
        assert!(Checkpoint::decode(&bytes[..20]).is_err());
    }
}
