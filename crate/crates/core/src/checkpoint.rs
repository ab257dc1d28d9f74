//! Versioned binary model files.
//!
//! Layout (little-endian): magic `SAEM`, `u32` version, `u32` header length,
//! UTF-8 JSON header, then every parameter as row-major `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{Matrix, ParamStore};
use crate::error::CheckpointError;

pub const MAGIC: &[u8; 4] = b"SAEM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// `"selector"` or `"reasoner"`.
    pub kind: String,
    pub dtype: String,
    /// Model configuration as JSON.
    pub config: serde_json::Value,
    /// Embedding source the model was trained against.
    pub embed: serde_json::Value,
    pub params: Vec<ParamHeader>,
}

/// Header plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Matrix>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, config: serde_json::Value, embed: serde_json::Value, store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|p| ParamHeader {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                version: VERSION,
                kind: kind.to_string(),
                dtype: "f64".into(),
                config,
                embed,
                params,
            },
            values: store.iter().map(|p| p.value.clone()).collect(),
        }
    }

    /// Copies stored values into a freshly built store with identical names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if store.len() != self.values.len() {
            return Err(CheckpointError::Mismatch(format!(
                "model has {} parameters, checkpoint has {}",
                store.len(),
                self.values.len()
            )));
        }
        for (meta, value) in self.header.params.iter().zip(&self.values) {
            let id = store
                .find(&meta.name)
                .ok_or_else(|| CheckpointError::Mismatch(format!("model has no parameter `{}`", meta.name)))?;
            let target = store.value_mut(id);
            if target.shape() != value.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter `{}` is {:?} in the model but {:?} in the checkpoint",
                    meta.name,
                    target.shape(),
                    value.shape()
                )));
            }
            *target = value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.values {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(CheckpointError::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let end = 12usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt("header length exceeds file size".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..end])
            .map_err(|e| CheckpointError::Format(format!("invalid header JSON: {e}")))?;
        if header.dtype != "f64" {
            return Err(CheckpointError::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let expected: usize = header.params.iter().map(|p| p.rows * p.cols * 8).sum();
        let payload = &bytes[end..];
        if payload.len() != expected {
            return Err(CheckpointError::Corrupt(format!(
                "payload is {} bytes but the header describes {expected}",
                payload.len()
            )));
        }
        let mut values = Vec::with_capacity(header.params.len());
        let mut cursor = 0;
        for p in &header.params {
            let n = p.rows * p.cols;
            let data = payload[cursor..cursor + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cursor += 8 * n;
            values.push(Matrix::from_vec(p.rows, p.cols, data));
        }
        Ok(Self { header, values })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", Matrix::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0]]));
        s.add("a.bias", Matrix::row_vector(&[f64::MIN_POSITIVE, -0.0]));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::from_store("selector", serde_json::json!({"dim": 2}), serde_json::json!({"mode": "toy"}), &store());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut target = ParamStore::new();
        target.add("a.weight", Matrix::zeros(2, 2));
        target.add("a.bias", Matrix::zeros(1, 2));
        back.restore_into(&mut target).unwrap();
        for (a, b) in target.iter().zip(store().iter()) {
            assert_eq!(a.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       b.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corrupt_and_mismatched_files_fail() {
        let ck = Checkpoint::from_store("selector", serde_json::json!({}), serde_json::json!({}), &store());
        let bytes = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(Checkpoint::from_bytes(b"SAEE\x01\0\0\0\0\0\0\0"), Err(CheckpointError::Format(_))));
        let mut wrong = ParamStore::new();
        wrong.add("a.weight", Matrix::zeros(3, 2));
        wrong.add("a.bias", Matrix::zeros(1, 2));
        assert!(matches!(ck.restore_into(&mut wrong), Err(CheckpointError::Mismatch(_))));
    }
}
