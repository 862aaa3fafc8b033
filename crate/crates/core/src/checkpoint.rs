//! Binary model checkpoints.
//!
//! Layout (little-endian, no padding):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `NCAC` |
//! | 4     | u32 version (= 1) |
//! | 4     | u32 channels C |
//! | 4     | u32 hidden D |
//! | 8     | u64 seed |
//! | 8     | u64 training steps |
//! | ...   | f32 W1 (D x 4C, row-major), f32 b1 (D), f32 W2 (C x D, row-major) |

use std::path::Path;

use crate::error::{NcaError, Result};
use crate::model::NcaParams;

pub const MAGIC: [u8; 4] = *b"NCAC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub train_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: NcaParams<f32>,
    pub meta: CheckpointMeta,
}

/// Parameter payload size in bytes for a `(C, D)` model.
pub fn payload_len(channels: usize, hidden: usize) -> usize {
    4 * (hidden * 4 * channels + hidden + channels * hidden)
}

impl ModelCheckpoint {
    pub fn new(params: NcaParams<f32>, meta: CheckpointMeta) -> Self {
        Self { params, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(HEADER_LEN + payload_len(p.channels(), p.hidden()));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.channels() as u32).to_le_bytes());
        out.extend_from_slice(&(p.hidden() as u32).to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&self.meta.train_steps.to_le_bytes());
        for tensor in p.tensors() {
            for x in tensor {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(NcaError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(NcaError::TruncatedCheckpoint {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(NcaError::UnsupportedVersion(version));
        }
        let channels = u32_at(8) as usize;
        let hidden = u32_at(12) as usize;
        if channels == 0 || hidden == 0 {
            return Err(NcaError::InvalidArgument(format!(
                "checkpoint declares C={channels}, D={hidden}"
            )));
        }
        let meta = CheckpointMeta {
            seed: u64_at(16),
            train_steps: u64_at(24),
        };
        let expected = HEADER_LEN + payload_len(channels, hidden);
        if bytes.len() < expected {
            return Err(NcaError::TruncatedCheckpoint {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(NcaError::InvalidArgument(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - expected
            )));
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize, name: &'static str| -> Result<Vec<f32>> {
            let v: Vec<f32> = floats.by_ref().take(n).collect();
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err(NcaError::NonFiniteParameter(name))
            }
        };
        let w1 = take(hidden * 4 * channels, "w1")?;
        let b1 = take(hidden, "b1")?;
        let w2 = take(channels * hidden, "w2")?;
        let params = NcaParams::from_parts(channels, hidden, w1, b1, w2)?;
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| NcaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| NcaError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(
    params: &NcaParams<f32>,
    meta: CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    ModelCheckpoint::new(params.clone(), meta).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NcaParams<f32>, CheckpointMeta)> {
    let ck = ModelCheckpoint::load(path)?;
    Ok((ck.params, ck.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn sample() -> ModelCheckpoint {
        let mut rng = RngStream::new(3);
        let mut params = NcaParams::init(8, 32, &mut rng);
        for w in params.w2_mut() {
            *w = rng.next_uniform() as f32 - 0.5;
        }
        ModelCheckpoint::new(
            params,
            CheckpointMeta {
                seed: 99,
                train_steps: 1234,
            },
        )
    }

    #[test]
    fn payload_arithmetic() {
        assert_eq!(payload_len(8, 32), 5248);
        assert_eq!(sample().to_bytes().len(), HEADER_LEN + 5248);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nca");
        let ck = sample();
        save_checkpoint(&ck.params, ck.meta, &path).unwrap();
        let (params, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, ck.meta);
        for (a, b) in params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupted_inputs_have_distinct_errors() {
        let good = sample().to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bad_magic),
            Err(NcaError::BadMagic)
        ));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bad_version),
            Err(NcaError::UnsupportedVersion(2))
        ));

        assert!(matches!(
            ModelCheckpoint::from_bytes(&good[..good.len() - 1]),
            Err(NcaError::TruncatedCheckpoint { .. })
        ));
        assert!(matches!(
            ModelCheckpoint::from_bytes(&good[..10]),
            Err(NcaError::TruncatedCheckpoint { .. })
        ));

        let mut nan = good.clone();
        let off = HEADER_LEN + 4 * (32 * 32 + 32);
        nan[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            ModelCheckpoint::from_bytes(&nan),
            Err(NcaError::NonFiniteParameter("w2"))
        ));
    }
}
