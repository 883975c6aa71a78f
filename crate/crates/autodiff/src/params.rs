//! Named parameter storage and the checkpoint container.
//!
//! Checkpoint layout:
//!
//! ```text
//! b"LTLMCKPT" | u32 version | u64 header length | JSON header | f64 payloads
//! ```
//!
//! The header lists tensor names and shapes in payload order together with
//! free-form metadata. All integers and floats are little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::AutodiffError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LTLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

/// Named tensors plus metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), AutodiffError> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorHeader {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(24 + json.len() + 8 * self.tensors.num_values());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in self.tensors.iter() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self, AutodiffError> {
        let bad = |m: &str| AutodiffError::Checkpoint(m.to_string());
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let mut payload = &body[hlen..];
        let mut tensors = ParamStore::new();
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(&format!("truncated payload for {}", th.name)));
            }
            let data = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[8 * n..];
            tensors.add(&th.name, Tensor::new(th.shape, data)?)?;
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()).unwrap();
        store.add("b", Tensor::scalar(-3.25)).unwrap();
        let ckpt = Checkpoint {
            meta: serde_json::json!({"step": 7, "config": {"d": 4}}),
            tensors: store,
        };
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        for ((n1, t1), (n2, t2)) in ckpt.tensors.iter().zip(back.tensors.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        assert!(Checkpoint::read(&b"NOTACKPT00000000000000"[..]).is_err());
        let ckpt = Checkpoint {
            meta: serde_json::Value::Null,
            tensors: ParamStore::new(),
        };
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        buf.push(0);
        assert!(Checkpoint::read(buf.as_slice()).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(s.add("a", Tensor::scalar(1.0)), Err(AutodiffError::DuplicateParam(_))));
    }
}
