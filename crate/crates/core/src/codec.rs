//! Little-endian primitives shared by the binary checkpoint formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

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

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedFile(format!("while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found, "magic")?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, "u8")?;
    Ok(b[0])
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, "u16")?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b, "f64 payload")?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof<R: Read>(r: &mut R, records: u64) -> Result<()> {
    let mut b = [0u8; 1];
    loop {
        match r.read(&mut b) {
            Ok(0) => return Ok(()),
            Ok(_) => return Err(Error::TrailingData { records }),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::Io(e)),
        }
    }
}
