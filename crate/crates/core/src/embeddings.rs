//! `EMB1` embedding files: a fixed header followed by `count` records of
//! `[label u32][dim × f32]`, all little-endian.
//!
//! ```text
//! "EMB1" | version u16 = 1 | dim u32 | count u64 | records...
//! ```
//!
//! [`EmbeddingReader`] streams records one at a time; memory use depends on
//! `dim` only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"EMB1";
pub const EMBEDDING_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Buffer size used by [`EmbeddingReader::open`].
pub const READ_BUFFER: usize = 64 * 1024;

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub label: u32,
    pub features: Vector,
}

impl EmbeddingRecord {
    pub fn new(label: u32, features: Vec<f64>) -> Result<Self> {
        Ok(Self {
            label,
            features: Vector::new(features)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub version: u16,
    pub dim: u32,
    pub count: u64,
}

impl EmbeddingHeader {
    pub fn record_len(&self) -> usize {
        4 + 4 * self.dim as usize
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_magic(r, EMBEDDING_MAGIC)?;
        let version = codec::read_u16(r)?;
        if version != EMBEDDING_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = codec::read_u32(r)?;
        if dim == 0 {
            return Err(Error::Corrupt("embedding dimension is zero".into()));
        }
        let count = codec::read_u64(r)?;
        Ok(Self {
            version,
            dim,
            count,
        })
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&EMBEDDING_MAGIC)?;
        codec::write_u16(w, self.version)?;
        codec::write_u32(w, self.dim)?;
        codec::write_u64(w, self.count)?;
        Ok(())
    }
}

/// Streaming reader yielding records in file order.
///
/// After the last declared record the reader checks that no bytes remain;
/// a short file yields [`Error::TruncatedFile`] and trailing bytes yield
/// [`Error::TrailingData`]. Iteration stops after the first error.
pub struct EmbeddingReader<R> {
    inner: R,
    header: EmbeddingHeader,
    next_index: u64,
    buf: Vec<u8>,
    done: bool,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::new(BufReader::with_capacity(READ_BUFFER, file))
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = EmbeddingHeader::read(&mut inner)?;
        Ok(Self {
            inner,
            buf: vec![0u8; header.record_len()],
            header,
            next_index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    fn read_record(&mut self) -> Result<EmbeddingRecord> {
        let index = self.next_index;
        codec::read_exact(&mut self.inner, &mut self.buf, "record").map_err(|e| match e {
            Error::TruncatedFile(_) => Error::TruncatedFile(format!(
                "header declares {} records, record {index} is incomplete",
                self.header.count
            )),
            other => other,
        })?;
        let label = u32::from_le_bytes(self.buf[..4].try_into().expect("4 bytes"));
        let features: Vec<f64> = self.buf[4..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature { index });
        }
        self.next_index += 1;
        Ok(EmbeddingRecord {
            label,
            features: Vector::from_finite(features),
        })
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next_index == self.header.count {
            self.done = true;
            return match codec::expect_eof(&mut self.inner, self.header.count) {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        let rec = self.read_record();
        if rec.is_err() {
            self.done = true;
        }
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.count - self.next_index) as usize;
        (0, Some(left + 1))
    }
}

/// Reads a whole file into memory.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    EmbeddingReader::open(path)?.collect()
}

/// Writes records with a header whose count is known up front.
pub struct EmbeddingWriter<W: Write> {
    inner: W,
    header: EmbeddingHeader,
    written: u64,
}

impl EmbeddingWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, dim: usize, count: u64) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), dim, count)
    }
}

impl<W: Write> EmbeddingWriter<W> {
    pub fn new(mut inner: W, dim: usize, count: u64) -> Result<Self> {
        let dim = u32::try_from(dim)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::InvalidSpec(format!("unsupported dimension {dim}")))?;
        let header = EmbeddingHeader {
            version: EMBEDDING_VERSION,
            dim,
            count,
        };
        header.write(&mut inner)?;
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    /// Appends one record. Features are narrowed to `f32`; values that do
    /// not fit become non-finite and are rejected.
    pub fn write(&mut self, label: u32, features: &[f64]) -> Result<()> {
        if features.len() != self.header.dim as usize {
            return Err(Error::DimMismatch {
                expected: self.header.dim as usize,
                actual: features.len(),
            });
        }
        if self.written == self.header.count {
            return Err(Error::InvalidSpec(format!(
                "header declares {} records",
                self.header.count
            )));
        }
        let mut buf = Vec::with_capacity(self.header.record_len());
        buf.extend_from_slice(&label.to_le_bytes());
        for &x in features {
            let narrow = x as f32;
            if !narrow.is_finite() {
                return Err(Error::NonFiniteFeature {
                    index: self.written,
                });
            }
            buf.extend_from_slice(&narrow.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.count {
            return Err(Error::TruncatedFile(format!(
                "wrote {} of {} declared records",
                self.written, self.header.count
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes a complete file from in-memory records.
pub fn write_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(1, |r| r.dim());
    let mut w = EmbeddingWriter::create(path, dim, records.len() as u64)?;
    for r in records {
        w.write(r.label, &r.features)?;
    }
    w.finish()?;
    Ok(())
}

/// Encodes records into an in-memory `EMB1` image.
pub fn encode_embeddings(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let mut w = EmbeddingWriter::new(Vec::new(), dim, records.len() as u64)?;
    for r in records {
        w.write(r.label, &r.features)?;
    }
    w.finish()
}
