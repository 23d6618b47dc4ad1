//! `SABRCKPT` model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SABRCKPT"  u32 version (=1)
//! u32 n_meta   { u32 len, utf8 key, u32 len, utf8 value } * n_meta
//! u32 n_blobs  { u32 len, utf8 name, u64 rows, u64 cols, f64 * rows*cols } * n_blobs
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, SabrError};
use crate::math::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SABRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    meta: BTreeMap<String, String>,
    blobs: Vec<(String, Matrix)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| SabrError::Data(format!("checkpoint lacks metadata `{key}`")))
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse().map_err(|_| {
            SabrError::Data(format!(
                "checkpoint metadata `{key}` = `{raw}` is malformed"
            ))
        })
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) -> &mut Self {
        self.blobs.push((name.into(), m));
        self
    }

    pub fn extend(&mut self, blobs: impl IntoIterator<Item = (String, Matrix)>) -> &mut Self {
        self.blobs.extend(blobs);
        self
    }

    pub fn blob(&self, name: &str) -> Option<&Matrix> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.blob(name)
            .ok_or_else(|| SabrError::Data(format!("checkpoint lacks blob `{name}`")))
    }

    pub fn blob_names(&self) -> impl Iterator<Item = &str> {
        self.blobs.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, m) in &self.blobs {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |msg: String| SabrError::format(origin, msg);
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).map_err(fail)? != CHECKPOINT_MAGIC {
            return Err(fail("missing SABRCKPT magic".into()));
        }
        let version = r.u32().map_err(fail)?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32().map_err(fail)? {
            let k = r.string().map_err(fail)?;
            let v = r.string().map_err(fail)?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32().map_err(fail)? {
            let name = r.string().map_err(fail)?;
            let rows = r.u64().map_err(fail)? as usize;
            let cols = r.u64().map_err(fail)? as usize;
            let raw = r.take(rows * cols * 8).map_err(fail)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|e| fail(format!("blob `{name}`: {e}")))?;
            ck.blobs.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| SabrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SabrError::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}
