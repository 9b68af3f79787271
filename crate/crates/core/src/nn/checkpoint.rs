//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "CPCKPT01"
//! meta_len  u32      followed by meta_len bytes of UTF-8 metadata
//! count     u32
//! count × { name_len u32, name bytes, constraint u8 (0 free, 1 non-negative),
//!           ndim u32, ndim × u64 dims, product(dims) × f64 values }
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! exact and identical parameters always produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{Constraint, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CPCKPT01";

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore, metadata: &str) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(metadata.len() as u32).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, p) in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let flag: u8 = match p.constraint {
            Constraint::Free => 0,
            Constraint::NonNegative => 1,
        };
        w.write_all(&[flag])?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated input: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(ParamStore, String)> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let meta_len = r.u32()? as usize;
    let metadata = r.string(meta_len)?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let constraint = match r.u8()? {
            0 => Constraint::Free,
            1 => Constraint::NonNegative,
            other => return Err(Error::Checkpoint(format!("unknown constraint flag {other} for {name}"))),
        };
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.insert(name, Tensor::new(shape, data), constraint);
    }
    Ok((params, metadata))
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_checkpoint(BufWriter::new(file), params, metadata)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, String)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(BufReader::new(file))
}
