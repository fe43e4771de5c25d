//! Binary tensor container: the on-disk format shared by checkpoints and
//! encoded-corpus files.
//!
//! All integers are little-endian. Container layout:
//!
//! ```text
//! magic    4 bytes  b"DTNS"
//! version  u8       (currently 1)
//! count    u32      number of records
//! records  count × record
//! ```
//!
//! Record layout:
//!
//! ```text
//! name_len u16, name bytes (UTF-8)
//! dtype    u8       1 = f32, 2 = f64
//! rank     u8
//! dims     rank × u32
//! values   product(dims) × 4 (f32) or 8 (f64) bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dtype, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTNS";
pub const VERSION: u8 = 1;

/// One named tensor as read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedRecord<F: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Borrowed view used when writing.
pub struct Record<'a, F: Real> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub data: &'a [F],
}

// ---- primitive byte helpers (shared by the other binary formats) ----

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::contract(format!("string too long to serialize: {} bytes", bytes.len())));
    }
    write_u16(w, bytes.len() as u16)?;
    w.write_all(bytes)?;
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::contract(format!("invalid UTF-8 in string field: {e}")))
}

// ---- record / container IO ----

pub fn write_record<F: Real, W: Write>(w: &mut W, rec: &Record<'_, F>) -> Result<()> {
    debug_assert_eq!(rec.shape.iter().product::<usize>(), rec.data.len());
    write_str(w, rec.name)?;
    write_u8(w, F::DTYPE.code())?;
    if rec.shape.len() > u8::MAX as usize {
        return Err(Error::contract(format!("rank {} too large", rec.shape.len())));
    }
    write_u8(w, rec.shape.len() as u8)?;
    for &d in rec.shape {
        write_u32(w, d as u32)?;
    }
    match F::DTYPE {
        Dtype::F32 => {
            for v in rec.data {
                write_f32(w, v.to_f64c() as f32)?;
            }
        }
        Dtype::F64 => {
            for v in rec.data {
                write_f64(w, v.to_f64c())?;
            }
        }
    }
    Ok(())
}

pub fn read_record<F: Real, R: Read>(r: &mut R, path: &str) -> Result<OwnedRecord<F>> {
    let name = read_str(r)?;
    let code = read_u8(r)?;
    let dtype = Dtype::from_code(code)
        .ok_or_else(|| Error::Format { path: path.to_string(), msg: format!("unknown dtype code {code}") })?;
    if dtype != F::DTYPE {
        return Err(Error::Format {
            path: path.to_string(),
            msg: format!("record {name:?} has dtype {dtype:?}, expected {:?}", F::DTYPE),
        });
    }
    let rank = read_u8(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        Dtype::F32 => {
            for _ in 0..n {
                data.push(F::from_f64c(read_f32(r)? as f64));
            }
        }
        Dtype::F64 => {
            for _ in 0..n {
                data.push(F::from_f64c(read_f64(r)?));
            }
        }
    }
    Ok(OwnedRecord { name, shape, data })
}

pub fn write_container<F: Real, W: Write>(w: &mut W, records: &[Record<'_, F>]) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u8(w, VERSION)?;
    write_u32(w, records.len() as u32)?;
    for rec in records {
        write_record(w, rec)?;
    }
    Ok(())
}

pub fn read_container<F: Real, R: Read>(r: &mut R, path: &str) -> Result<Vec<OwnedRecord<F>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { path: path.to_string(), msg: "bad magic, not a tensor container".to_string() });
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(Error::Format { path: path.to_string(), msg: format!("unsupported container version {version}") });
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(read_record(r, path)?);
    }
    Ok(out)
}

pub fn write_tensors_file<F: Real>(path: &Path, records: &[Record<'_, F>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensors_file<F: Real>(path: &Path) -> Result<Vec<OwnedRecord<F>>> {
    let mut r = BufReader::new(File::open(path)?);
    read_container(&mut r, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_f32() {
        let data = vec![1.0f32, -2.5, 3.25, 0.0, 5.5, -6.125];
        let rec = Record { name: "weights", shape: &[2, 3], data: &data };
        let mut buf = Vec::new();
        write_container(&mut buf, &[rec]).unwrap();
        let back: Vec<OwnedRecord<f32>> = read_container(&mut buf.as_slice(), "mem").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].name, "weights");
        assert_eq!(back[0].shape, vec![2, 3]);
        assert_eq!(back[0].data, data);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let data = vec![1.0f32; 4];
        let rec = Record { name: "w", shape: &[4], data: &data };
        let mut buf = Vec::new();
        write_container(&mut buf, &[rec]).unwrap();
        let err = read_container::<f64, _>(&mut buf.as_slice(), "mem").unwrap_err();
        assert!(err.to_string().contains("dtype"));
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"XXXX\x01\x00\x00\x00\x00".to_vec();
        let err = read_container::<f32, _>(&mut buf.as_slice(), "mem").unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
