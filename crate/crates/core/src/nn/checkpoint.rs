//! Parameter checkpoints: a JSON container of named tensors whose values are
//! little-endian `f64` bytes, base64-encoded.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::Param;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Base64 of little-endian f64 values.
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params<'a>(kind: &str, params: impl IntoIterator<Item = &'a Param>) -> Self {
        let tensors = params
            .into_iter()
            .map(|p| {
                let mut bytes = Vec::with_capacity(p.value.len() * 8);
                for v in &p.value {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                TensorRecord {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                    data: STANDARD.encode(bytes),
                }
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            metadata: serde_json::Value::Null,
            tensors,
        }
    }

    pub fn decode(record: &TensorRecord) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&record.data)
            .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", record.name)))?;
        let n: usize = record.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: {} bytes for {} values",
                record.name,
                bytes.len(),
                n
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    /// Copies stored values into matching parameters. Every parameter must be present.
    pub fn apply(&self, params: Vec<&mut Param>) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        for p in params {
            let rec = self
                .tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {}", p.name)))?;
            if rec.shape != p.shape {
                return Err(Error::shape(format!("checkpoint tensor {}", p.name), &p.shape, &rec.shape));
            }
            p.value = Self::decode(rec)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: ck.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Param::new("a.w", vec![2, 2], vec![0.1, -1e-300, f64::MAX, 3.0], true);
        let b = Param::new("b.bias", vec![1], vec![1.0 / 3.0], false);
        let ck = Checkpoint::from_params("test", [&a, &b]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let mut a2 = Param::zeros("a.w", vec![2, 2], true);
        let mut b2 = Param::zeros("b.bias", vec![1], false);
        loaded.apply(vec![&mut a2, &mut b2]).unwrap();
        assert_eq!(a2.value, a.value);
        assert_eq!(b2.value, b.value);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Param::new("a", vec![2], vec![1.0, 2.0], true);
        let ck = Checkpoint::from_params("t", [&a]);
        let mut bad = Param::zeros("a", vec![3], true);
        assert!(ck.apply(vec![&mut bad]).is_err());
    }
}
