//! Binary model container shared by every trained model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CHGT" | u32 format version | u64 header length | header JSON | f32 tensor data
//! ```
//!
//! The header lists `{name, shape}` for each tensor in storage order, the model
//! kind, provenance, and a kind-specific `extra` object (vocabularies, dims).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::ArtifactMeta;

const MAGIC: &[u8; 4] = b"CHGT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    #[serde(default)]
    meta: Option<ArtifactMeta>,
    #[serde(default)]
    extra: serde_json::Value,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Option<ArtifactMeta>,
    pub extra: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: &str, meta: Option<ArtifactMeta>, extra: serde_json::Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            extra,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: &[f64]) {
        self.tensors.push(Tensor::new(name, shape, data.to_vec()));
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor `{}` data does not match shape {:?}", t.name, t.shape)));
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            extra: self.extra.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorSpec {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)?;
        let n: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + hjson.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for t in &self.tensors {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Format(format!("model container: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for spec in header.tensors {
            let n: usize = spec.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| err(&format!("truncated tensor `{}`", spec.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            pos += 4 * n;
            tensors.push(Tensor {
                name: spec.name,
                shape: spec.shape,
                data,
            });
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            extra: header.extra,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("expected a `{kind}` model, found `{}`", self.kind)))
        }
    }

    /// Tensor by name with its expected shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Format(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(&t.data)
    }

    pub fn extra_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .extra
            .get(key)
            .ok_or_else(|| Error::Format(format!("model header lacks `{key}`")))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_f32_precision() {
        let mut c = Container::new("test", Some(ArtifactMeta::new(&1, 5)), serde_json::json!({"dim": 2}));
        c.push("w", vec![2, 2], &[1.0, 0.5, -0.25, 3.0]);
        c.push("b", vec![0], &[]);
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.extra_field::<usize>("dim").unwrap(), 2);
        assert!(back.tensor("w", &[4]).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"nope").is_err());
        let mut c = Container::new("x", None, serde_json::Value::Null);
        c.push("w", vec![3], &[1.0, 2.0, 3.0]);
        let bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
