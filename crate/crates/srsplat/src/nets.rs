//! Binary checkpoint of the IM and BP heads.
//!
//! Layout (little-endian): magic `SRNETS01`, `u32` kernel size, `u32` IM
//! count, then per IM a `u32` length and that many `f64`, then a `u32` BP
//! length and its `f64` values.

use std::path::Path;

use srsplat_core::nn::{BlurProposal, InconsistencyModel};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SRNETS01";

pub fn encode_nets(ims: &[InconsistencyModel], bp: &BlurProposal) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(bp.kernel_size as u32).to_le_bytes());
    out.extend_from_slice(&(ims.len() as u32).to_le_bytes());
    let mut push = |params: &[f64]| {
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for im in ims {
        push(&im.params);
    }
    push(&bp.params);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], (usize, String)> {
        if self.bytes.len() - self.pos < n {
            return Err((self.pos, format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, (usize, String)> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn params(&mut self) -> std::result::Result<(usize, Vec<f64>), (usize, String)> {
        let at = self.pos;
        let n = self.u32()?;
        let raw = self.take(n.checked_mul(8).ok_or((at, "length overflow".to_string()))?)?;
        Ok((at, raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect()))
    }
}

pub fn decode_nets(bytes: &[u8]) -> std::result::Result<(Vec<InconsistencyModel>, BlurProposal), (usize, String)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err((0, "bad magic".into()));
    }
    let k = c.u32()?;
    let n_im = c.u32()?;
    let mut ims = Vec::new();
    for _ in 0..n_im {
        let (at, p) = c.params()?;
        ims.push(InconsistencyModel::from_params(p).map_err(|e| (at, e.to_string()))?);
    }
    let (at, p) = c.params()?;
    let bp = BlurProposal::from_params(k, p).map_err(|e| (at, e.to_string()))?;
    if c.pos != bytes.len() {
        return Err((c.pos, "trailing bytes".into()));
    }
    Ok((ims, bp))
}

pub fn write_nets(ims: &[InconsistencyModel], bp: &BlurProposal, path: &Path) -> Result<()> {
    std::fs::write(path, encode_nets(ims, bp)).map_err(|e| Error::io(path, e))
}

pub fn read_nets(path: &Path) -> Result<(Vec<InconsistencyModel>, BlurProposal)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nets(&bytes).map_err(|(offset, message)| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    })
}
