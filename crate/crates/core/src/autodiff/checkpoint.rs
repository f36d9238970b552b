//! Binary checkpoint format.
//!
//! Layout: magic `HNRC`, u32 version, u32 tensor count, then per tensor a
//! u16 name length, the name bytes, u8 rank, u32 dims, and little-endian f32
//! data.

use super::{Array, ParamSet};
use crate::error::{HnrError, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HNRC";
const VERSION: u32 = 1;

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.iter() {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(value.shape().len() as u8);
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in value.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HnrError::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(HnrError::Format { offset: 0, msg: "bad magic, expected HNRC".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(HnrError::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = r.u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_off = r.pos;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| {
            HnrError::Format { offset: name_off as u64, msg: "name is not utf-8".into() }
        })?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let b = r.take(4, "tensor data")?;
            data.push(f32::from_le_bytes(b.try_into().unwrap()) as f64);
        }
        params.insert(name, Array::from_vec(shape, data));
    }
    Ok(params)
}
