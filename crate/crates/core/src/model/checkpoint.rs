//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TITLEGEN"
//! 8       4     u32 format version (1)
//! 12      4     u32 header length H
//! 16      H     UTF-8 JSON header {"kind", "meta", "tensors": [{"name", "shape"}]}
//! 16+H    ...   tensor values as f64, in header order, each row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{CaptionModel, ModelDims, ModelKind, SpecialTokens};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"TITLEGEN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Map<String, Value>,
    tensors: Vec<TensorEntry>,
}

/// A named set of tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Map<String, Value>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, params: ParamSet) -> Self {
        Self {
            kind: kind.into(),
            meta: Map::new(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut offset = 16 + hlen;
        let mut params = ParamSet::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(entry.name, Tensor::new(entry.shape, data)?);
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("{key}: {e}")))
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) {
        self.meta.insert(
            key.to_string(),
            serde_json::to_value(value).expect("meta serializes"),
        );
    }
}

impl CaptionModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.kind().name(), self.params().clone());
        ck.set_meta("dims", self.dims());
        ck.set_meta("tokens", &self.tokens());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ck.kind.parse()?;
        let dims: ModelDims = ck.meta_as("dims")?;
        let tokens: SpecialTokens = ck.meta_as("tokens")?;
        CaptionModel::from_params(kind, dims, tokens, ck.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = ModelDims::compact(5, 9, 6);
        let m = CaptionModel::init(ModelKind::Sa, dims, SpecialTokens::default(), &mut rng).unwrap();
        let mut ck = m.to_checkpoint();
        ck.set_meta("vocabulary", &vec!["<bos>", "<eos>"]);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"TITLEGEN");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(CaptionModel::from_checkpoint(&back).unwrap(), m);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0\0\0\0\0").is_err());
        let ck = Checkpoint::new("detector", ParamSet::new());
        let mut bytes = ck.to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
