//! Little-endian helpers shared by the dictionary, checkpoint and visual
//! feature file formats. Every format starts with an 11-byte NUL-terminated
//! magic string followed by a `u32` version.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC_LEN: usize = 11;

pub fn write_header<W: Write>(w: &mut W, magic: &[u8; MAGIC_LEN], version: u32) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

/// Reads and checks the magic, returning the version.
pub fn read_header<R: Read>(r: &mut R, magic: &[u8; MAGIC_LEN]) -> Result<u32> {
    let mut found = [0u8; MAGIC_LEN];
    read_exact(r, &mut found)?;
    if &found != magic {
        return Err(Error::CorruptHeader(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(&magic[..MAGIC_LEN - 1])
        )));
    }
    read_u32(r)
}

pub fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedFile,
        _ => Error::Io(e),
    })
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::CorruptHeader("dimension overflows usize".into()))
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count.checked_mul(8).ok_or(Error::TruncatedFile)?];
    read_exact(r, &mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Fails with `DimMismatch` if the reader has bytes left.
pub fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::DimMismatch("trailing data after declared payload".into())),
    }
}
