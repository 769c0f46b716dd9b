//! Binary checkpoints, little-endian:
//!
//! ```text
//! magic "PPNDF\0" | version u16 | skeleton hash u64 | connections u32
//! | parents (i32, -1 at the root) × connections | embedding u32
//! | encoder widths (count u32, u32...) | decoder widths (count u32, u32...)
//! | activation u8 | seed u64 | param count u64 | params f64 × count
//! ```

use std::path::Path;

use super::{NdfConfig, NdfModel};
use crate::error::{Error, Result};
use crate::pose::Topology;

const MAGIC: &[u8; 6] = b"PPNDF\0";
const VERSION: u16 = 1;
/// Softplus hidden units with a softplus output.
const ACT_SOFTPLUS: u8 = 1;

impl NdfModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.topology.hash().to_le_bytes());
        let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put_u32(&mut out, self.topology.len());
        for p in self.topology.parents() {
            let v = p.map_or(-1, |p| p as i32);
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.config.embedding_dim);
        for widths in [&self.config.encoder_hidden, &self.config.decoder_hidden] {
            put_u32(&mut out, widths.len());
            for &w in widths.iter() {
                put_u32(&mut out, w);
            }
        }
        out.push(ACT_SOFTPLUS);
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint. When `expected_hash` is given, the stored
    /// skeleton hash must match it.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::FormatVersionMismatch("not a distance-field checkpoint".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::FormatVersionMismatch(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let hash = u64::from_le_bytes(r.array()?);
        if let Some(expected) = expected_hash {
            if expected != hash {
                return Err(Error::SkeletonMismatch { expected, found: hash });
            }
        }
        let n = r.count(1 << 16)?;
        let mut parents = Vec::with_capacity(n);
        for c in 0..n {
            let p = i32::from_le_bytes(r.array()?);
            parents.push(match p {
                -1 => None,
                p if p >= 0 && (p as usize) < c => Some(p as usize),
                p => return Err(Error::Corrupt(format!("connection {c} has parent {p}"))),
            });
        }
        let embedding_dim = r.count(1 << 16)?;
        let mut widths = || -> Result<Vec<usize>> {
            let k = r.count(64)?;
            (0..k).map(|_| r.count(1 << 20)).collect()
        };
        let encoder_hidden = widths()?;
        let decoder_hidden = widths()?;
        let act = r.take(1)?[0];
        if act != ACT_SOFTPLUS {
            return Err(Error::FormatVersionMismatch(format!("unknown activation code {act}")));
        }
        let seed = u64::from_le_bytes(r.array()?);
        let config = NdfConfig {
            embedding_dim,
            encoder_hidden,
            decoder_hidden,
            seed,
        };
        config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let mut model = NdfModel::new(Topology::new(parents, hash), config)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let count = u64::from_le_bytes(r.array()?) as usize;
        if count != model.params.len() {
            return Err(Error::Corrupt(format!(
                "{count} parameters stored, architecture needs {}",
                model.params.len()
            )));
        }
        for p in model.params.iter_mut() {
            *p = f64::from_le_bytes(r.array()?);
            if !p.is_finite() {
                return Err(Error::Corrupt("non-finite parameter".into()));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_hash)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint truncated at byte {} of {}",
                self.bytes.len(),
                end
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    /// A `u32` count, rejected above `max` so corrupt headers cannot
    /// trigger huge allocations.
    fn count(&mut self, max: usize) -> Result<usize> {
        let v = u32::from_le_bytes(self.array()?) as usize;
        if v > max {
            return Err(Error::Corrupt(format!("count {v} exceeds {max}")));
        }
        Ok(v)
    }
}
