//! CSD1 container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CSD1" | version u16 = 1 | reserved u16 = 0 | sample count u32
//!        | env tag length u8 | env tag (UTF-8)
//!        | per sample: label u8 | 2700 x f32 (row-major tensor order)
//! ```

use std::io::{self, Read, Write};

use super::{CsiSample, Dataset, PostureLabel, TENSOR_LEN};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CSD1";
pub const VERSION: u16 = 1;
/// Fixed part of the header, before the env tag bytes.
pub const FIXED_HEADER_LEN: usize = 13;
pub const SAMPLE_RECORD_LEN: usize = 1 + TENSOR_LEN * 4;

/// Total encoded size of a dataset with `count` samples and an env tag of
/// `tag_len` bytes.
pub fn encoded_len(tag_len: usize, count: usize) -> usize {
    FIXED_HEADER_LEN + tag_len + count * SAMPLE_RECORD_LEN
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            bytes_written: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Writes `dataset` as CSD1 and returns the number of bytes emitted.
pub fn write_csd<W: Write>(dataset: &Dataset, sink: W) -> Result<u64> {
    let tag = dataset.env_id.as_bytes();
    if tag.len() > u8::MAX as usize {
        return Err(Error::Precondition(format!(
            "env tag is {} bytes, at most 255 allowed",
            tag.len()
        )));
    }
    let count = u32::try_from(dataset.len())
        .map_err(|_| Error::Precondition("too many samples for CSD1".into()))?;

    let mut w = CountingWriter { inner: sink, written: 0 };
    let mut header = Vec::with_capacity(FIXED_HEADER_LEN + tag.len());
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&0u16.to_le_bytes());
    header.extend_from_slice(&count.to_le_bytes());
    header.push(tag.len() as u8);
    header.extend_from_slice(tag);
    w.put(&header)?;

    let mut record = Vec::with_capacity(SAMPLE_RECORD_LEN);
    for sample in &dataset.samples {
        record.clear();
        record.push(sample.label().code());
        for v in sample.raw() {
            record.extend_from_slice(&v.to_le_bytes());
        }
        w.put(&record)?;
    }
    w.inner.flush().map_err(|source| Error::Io {
        bytes_written: w.written,
        source,
    })?;
    Ok(w.written)
}

pub fn to_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(encoded_len(dataset.env_id.len(), dataset.len()));
    write_csd(dataset, &mut buf)?;
    Ok(buf)
}

/// Reads a whole CSD1 stream.
pub fn read_csd<R: Read>(mut source: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes).map_err(Error::io)?;
    parse_csd(&bytes)
}

fn truncated(expected: usize, actual: usize) -> Error {
    Error::Truncation {
        expected: expected as u64,
        actual: actual as u64,
    }
}

pub fn parse_csd(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MAGIC.len() {
        return Err(truncated(FIXED_HEADER_LEN, bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(truncated(FIXED_HEADER_LEN, bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported CSD version {version}")));
    }
    let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
    if reserved != 0 {
        return Err(Error::Format(format!("reserved field is {reserved}, expected 0")));
    }
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let tag_len = bytes[12] as usize;
    let expected = count
        .checked_mul(SAMPLE_RECORD_LEN)
        .and_then(|n| n.checked_add(FIXED_HEADER_LEN + tag_len))
        .ok_or_else(|| Error::Format(format!("sample count {count} overflows")))?;
    if bytes.len() < expected {
        return Err(truncated(expected, bytes.len()));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} samples",
            bytes.len() - expected
        )));
    }
    let tag = std::str::from_utf8(&bytes[FIXED_HEADER_LEN..FIXED_HEADER_LEN + tag_len])
        .map_err(|e| Error::Format(format!("env tag is not UTF-8: {e}")))?;

    let mut samples = Vec::with_capacity(count);
    let body = &bytes[FIXED_HEADER_LEN + tag_len..];
    for (i, record) in body.chunks_exact(SAMPLE_RECORD_LEN).enumerate() {
        let label = PostureLabel::from_code(record[0])
            .ok_or_else(|| Error::Format(format!("sample {i}: label code {} > 2", record[0])))?;
        let values = record[1..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let sample = CsiSample::from_f32(values, label).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("sample {i}: {msg}")),
            other => other,
        })?;
        samples.push(sample);
    }
    Ok(Dataset::new(tag, samples))
}

/// Convenience for `io::Error`-centric callers.
pub fn write_csd_file(dataset: &Dataset, path: &std::path::Path) -> Result<u64> {
    let file = std::fs::File::create(path).map_err(Error::io)?;
    write_csd(dataset, io::BufWriter::new(file))
}

pub fn read_csd_file(path: &std::path::Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(Error::io)?;
    parse_csd(&bytes)
}
