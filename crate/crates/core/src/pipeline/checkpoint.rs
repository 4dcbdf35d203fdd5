//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! header  magic      8 bytes  "TLCKPT\r\n"
//!         version    u32      currently 1
//!         length     u64      payload byte count
//!         checksum   32 bytes SHA-256 of the payload
//! payload stage      u8       1 or 2
//!         config     u32 byte count, UTF-8 text (canonical key = value form)
//!         features   u32 count, then per feature: u32 byte count, UTF-8
//!         arrays     u32 count, then per array:
//!                      u32 byte count, UTF-8 name
//!                      u32 rank, rank × u64 dims
//!                      product(dims) × f64 values
//! ```
//!
//! Arrays appear in parameter registration order, so saving a loaded
//! checkpoint reproduces the original bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::error::{CheckpointFault, Error, Result};
use crate::numcore::{ParamStore, ParamTensor};

pub const MAGIC: [u8; 8] = *b"TLCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 32;

/// Which training stage produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One = 1,
    Two = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: TrainConfig,
    /// Expression feature order the encoders expect.
    pub feature_ids: Vec<String>,
    pub params: ParamStore,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed() -> Error {
    Error::Checkpoint(CheckpointFault::Malformed)
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(malformed)?;
        let s = self.buf.get(self.pos..end).ok_or_else(malformed)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        p.push(self.stage as u8);
        put_str(&mut p, &self.config.to_text());
        p.extend_from_slice(&(self.feature_ids.len() as u32).to_le_bytes());
        for f in &self.feature_ids {
            put_str(&mut p, f);
        }
        p.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for t in self.params.iter() {
            put_str(&mut p, &t.name);
            p.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                p.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                p.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + p.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&p));
        out.extend_from_slice(&p);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fault = |f| Err(Error::Checkpoint(f));
        if bytes.len() < MAGIC.len() {
            return fault(CheckpointFault::Truncated);
        }
        if bytes[..8] != MAGIC {
            return fault(CheckpointFault::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return fault(CheckpointFault::Truncated);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return fault(CheckpointFault::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let payload = &bytes[HEADER_LEN..];
        if (payload.len() as u64) < len {
            return fault(CheckpointFault::Truncated);
        }
        if payload.len() as u64 != len {
            return fault(CheckpointFault::Malformed);
        }
        if Sha256::digest(payload).as_slice() != &bytes[20..52] {
            return fault(CheckpointFault::ChecksumMismatch);
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let stage = match r.u8()? {
            1 => Stage::One,
            2 => Stage::Two,
            _ => return Err(malformed()),
        };
        let config = TrainConfig::parse(&r.string()?)?;
        let n_features = r.u32()? as usize;
        let feature_ids = (0..n_features).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let n_arrays = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n_arrays {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(malformed)?;
            let raw = r.take(count.checked_mul(8).ok_or_else(malformed)?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params
                .insert(ParamTensor::new(name, shape, values).map_err(|_| malformed())?)
                .map_err(|_| malformed())?;
        }
        if r.pos != payload.len() {
            return Err(malformed());
        }
        Ok(Checkpoint {
            stage,
            config,
            feature_ids,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params
            .insert(ParamTensor::new("a.w0", vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap())
            .unwrap();
        params
            .insert(ParamTensor::new("a.b0", vec![1, 2], vec![0.1, 0.2]).unwrap())
            .unwrap();
        Checkpoint {
            stage: Stage::One,
            config: TrainConfig::default(),
            feature_ids: vec!["F0".into(), "F1".into()],
            params,
        }
    }

    fn fault(bytes: &[u8]) -> CheckpointFault {
        match Checkpoint::from_bytes(bytes) {
            Err(Error::Checkpoint(f)) => f,
            other => panic!("expected checkpoint fault, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let w = back.params.get("a.w0").unwrap();
        assert_eq!(w.values[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn each_fault_is_reported() {
        let bytes = sample().to_bytes();
        let mut b = bytes.clone();
        b[0] ^= 1;
        assert_eq!(fault(&b), CheckpointFault::BadMagic);
        let mut b = bytes.clone();
        b[8] = 9;
        assert_eq!(fault(&b), CheckpointFault::VersionMismatch { found: 9, expected: 1 });
        assert_eq!(fault(&bytes[..bytes.len() - 3]), CheckpointFault::Truncated);
        assert_eq!(fault(&bytes[..30]), CheckpointFault::Truncated);
        let mut b = bytes.clone();
        let last = b.len() - 1;
        b[last] ^= 0x40;
        assert_eq!(fault(&b), CheckpointFault::ChecksumMismatch);
        let mut b = bytes;
        b.push(0);
        assert_eq!(fault(&b), CheckpointFault::Malformed);
    }
}
