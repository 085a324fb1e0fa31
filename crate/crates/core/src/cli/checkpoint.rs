//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ATNSCKPT" | u32 version | u64 len | config text (len bytes)
//! u32 tensor count
//! per tensor: u32 name len | name | u32 rank | u64 dims.. | f64 values..
//! ```

use std::path::Path;

use super::config::RunConfig;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{check_layout, ParamId, Params};

pub const MAGIC: &[u8; 8] = b"ATNSCKPT";
pub const VERSION: u32 = 1;

pub fn encode(cfg: &RunConfig, params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = cfg.emit();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (id, t) in params.iter() {
        let name = id.name();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        // Binary files have no lines; the byte offset stands in.
        Error::Format {
            path: self.path.to_path_buf(),
            line: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| self.fail("length overflows"))
    }
}

/// Decodes a checkpoint into its config echo and parameters.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(RunConfig, Params)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(r.fail("not a checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| r.fail("config echo is not UTF-8"))?;
    let cfg = RunConfig::parse(text, path)?;
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| r.fail("tensor name is not UTF-8"))?;
        let id = ParamId::parse(name).ok_or_else(|| r.fail(format!("unknown tensor `{name}`")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let size = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.fail("shape overflows"))?;
        let raw = r.take(size.checked_mul(8).ok_or_else(|| r.fail("shape overflows"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(id, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &RunConfig, params: &Params) -> Result<()> {
    std::fs::write(path, encode(cfg, params)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and checks it against the shapes `cfg` calls for.
pub fn load(path: &Path, cfg: &RunConfig) -> Result<Params> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, params) = decode(&bytes, path)?;
    check_layout(&cfg.model, &params)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.n = 2;
        cfg.model.heads = 2;
        cfg.model.depth = 1;
        cfg
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = small();
        let p = init_params(&cfg.model, 3).unwrap();
        let (back_cfg, back) = decode(&encode(&cfg, &p), Path::new("x")).unwrap();
        assert_eq!(back_cfg, cfg);
        assert_eq!(back, p);
    }

    #[test]
    fn header_bytes() {
        let cfg = small();
        let bytes = encode(&cfg, &init_params(&cfg.model, 0).unwrap());
        assert_eq!(&bytes[..8], b"ATNSCKPT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    }

    #[test]
    fn corruption_is_reported() {
        let cfg = small();
        let bytes = encode(&cfg, &init_params(&cfg.model, 0).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, Path::new("x")).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad, Path::new("x")).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = small();
        save(&path, &cfg, &init_params(&cfg.model, 0).unwrap()).unwrap();
        let mut wider = cfg.clone();
        wider.model.n = 3;
        assert!(matches!(load(&path, &wider), Err(Error::Dimension(_))));
        assert!(load(&path, &cfg).is_ok());
    }
}
