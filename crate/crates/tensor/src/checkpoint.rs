//! Single-file tensor checkpoints.
//!
//! Layout:
//!
//! ```text
//! u64 LE   header length L in bytes
//! L bytes  UTF-8 JSON header {"metadata": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
//! payload  concatenated little-endian f64 values; `offset` is the byte offset
//!          of each tensor from the start of the payload
//! ```
//!
//! Tensors are packed in header order with no gaps. The loader rejects
//! overlapping or out-of-order offsets and any payload whose length differs
//! from the sum of the declared tensor sizes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, TensorError};
use crate::nn::ParamSet;
use crate::tensor::numel;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: BTreeMap<String, Value>,
    tensors: Vec<HeaderEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, Value>,
    pub tensors: Vec<NamedTensor>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    /// Snapshot of every parameter, in registry order.
    pub fn from_params(params: &ParamSet) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for p in params.iter() {
            let t = p.tensor();
            ckpt.tensors.push(NamedTensor {
                name: p.name().to_string(),
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            });
        }
        ckpt
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if numel(shape) != data.len() {
            return Err(bad(format!(
                "{name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(bad(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(NamedTensor {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Writes stored values into matching parameters. Every parameter must be
    /// present with an identical shape; extra checkpoint entries are ignored.
    pub fn restore_params(&self, params: &ParamSet) -> Result<()> {
        for p in params.iter() {
            let t = self
                .get(p.name())
                .ok_or_else(|| bad(format!("missing parameter {}", p.name())))?;
            if t.shape != p.shape() {
                return Err(bad(format!(
                    "{}: checkpoint shape {:?} != parameter shape {:?}",
                    p.name(),
                    t.shape,
                    p.shape()
                )));
            }
            p.set_data(t.data.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = HeaderEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 8 * t.data.len() as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or_else(|| bad("file shorter than the length prefix"))?
            .try_into()
            .expect("slice of length 8");
        let header_len =
            usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header too large"))?;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[8..header_end])?;
        let payload = &bytes[header_end..];

        ParamSet::check_unique(header.tensors.iter().map(|e| e.name.clone()))?;
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.offset != expected {
                return Err(bad(format!(
                    "{}: offset {} where {} expected",
                    e.name, e.offset, expected
                )));
            }
            if e.shape.contains(&0) {
                return Err(bad(format!("{}: zero-sized dimension", e.name)));
            }
            let n = numel(&e.shape);
            let start = e.offset as usize;
            let end = start + 8 * n;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| bad(format!("{}: payload truncated", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            expected += 8 * n as u64;
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        if payload.len() as u64 != expected {
            return Err(bad(format!(
                "payload is {} bytes but the header declares {}",
                payload.len(),
                expected
            )));
        }
        Ok(Checkpoint {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}
