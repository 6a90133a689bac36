//! Binary checkpoint container for [`SrnnParams`].
//!
//! Layout (all integers little-endian), see `docs/checkpoint-format.md`:
//!
//! ```text
//! magic      8 bytes   "DVAEUMOT"
//! version    u32       FORMAT_VERSION
//! meta_len   u32       byte length of the JSON metadata
//! meta       meta_len  UTF-8 JSON (CheckpointMeta)
//! count      u32       number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   ndim     u8, dims  ndim × u32
//!   data     product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::srnn::{SrnnParams, H_DIM, PARAM_SPECS, S_DIM, Z_DIM};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DVAEUMOT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub s_dim: usize,
    pub z_dim: usize,
    pub h_dim: usize,
    /// Epoch the weights come from (0 for untrained weights).
    pub epoch: usize,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn new(epoch: usize, seed: u64) -> Self {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            s_dim: S_DIM,
            z_dim: Z_DIM,
            h_dim: H_DIM,
            epoch,
            seed,
        }
    }
}

pub fn to_bytes(params: &SrnnParams, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta).expect("metadata serialises");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(PARAM_SPECS.len() as u32).to_le_bytes());
    for ((name, _), t) in PARAM_SPECS.iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint, checking magic, version, names, shapes and that
/// every value is finite.
pub fn from_bytes(buf: &[u8]) -> Result<(SrnnParams, CheckpointMeta)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let meta_len = c.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    if (meta.s_dim, meta.z_dim, meta.h_dim) != (S_DIM, Z_DIM, H_DIM) {
        return Err(Error::Checkpoint(format!(
            "dimension mismatch: checkpoint has s={}, z={}, h={}",
            meta.s_dim, meta.z_dim, meta.h_dim
        )));
    }
    let count = c.u32()? as usize;
    if count != PARAM_SPECS.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            PARAM_SPECS.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (expected, _) in PARAM_SPECS.iter() {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != *expected {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expected}, found {name}"
            )));
        }
        let ndim = c.u8()? as usize;
        let dims = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name} has a non-finite value at {i}")));
        }
        tensors.push(Tensor::new(dims, data)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - c.pos
        )));
    }
    Ok((SrnnParams::from_tensors(tensors)?, meta))
}

pub fn save(path: &Path, params: &SrnnParams, meta: &CheckpointMeta) -> Result<()> {
    let bytes = to_bytes(params, meta);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(SrnnParams, CheckpointMeta)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = SrnnParams::init(&mut rng::stream(1, &[]));
        let meta = CheckpointMeta::new(12, 99);
        let bytes = to_bytes(&p, &meta);
        let (q, m) = from_bytes(&bytes).unwrap();
        assert_eq!(m, meta);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(to_bytes(&q, &m), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = SrnnParams::init(&mut rng::stream(2, &[]));
        save(&path, &p, &CheckpointMeta::new(0, 2)).unwrap();
        assert_eq!(load(&path).unwrap().0, p);
    }

    #[test]
    fn rejects_corruption() {
        let p = SrnnParams::zeros();
        let bytes = to_bytes(&p, &CheckpointMeta::new(0, 0));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("version"));

        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn rejects_wrong_shape() {
        let p = SrnnParams::zeros();
        let mut bytes = to_bytes(&p, &CheckpointMeta::new(0, 0));
        // first tensor is lstm.w_ih [4, 32]; its first dim sits after the
        // header, metadata, count, name length, name and ndim
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let off = 16 + meta_len + 4 + 2 + "lstm.w_ih".len() + 1;
        bytes[off..off + 4].copy_from_slice(&8u32.to_le_bytes());
        bytes[off + 4..off + 8].copy_from_slice(&16u32.to_le_bytes());
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("lstm.w_ih"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load(Path::new("/nonexistent/x.ckpt")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/x.ckpt"));
    }
}
