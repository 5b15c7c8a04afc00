//! NPY v1.0 reading and writing for CSI tensors.
//!
//! Only little-endian `f4`/`f8` arrays in C order are handled. Accepted shapes
//! are `(5, 30, 3, 3, 2)` for one sample and `(N, 5, 30, 3, 3, 2)` for a batch.

use std::io::{Read, Write};

use super::{CsiSample, Dataset, PostureLabel, TENSOR_LEN, TENSOR_SHAPE};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// Parsed NPY contents: flat values in C order plus the declared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyTensor {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

impl NpyTensor {
    /// Number of samples described by the shape.
    pub fn sample_count(&self) -> usize {
        if self.shape.len() == TENSOR_SHAPE.len() {
            1
        } else {
            self.shape[0]
        }
    }

    /// Per-sample flat tensors.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(TENSOR_LEN)
    }

    /// Attaches labels, producing validated samples.
    pub fn into_dataset(self, env_id: &str, labels: &[PostureLabel]) -> Result<Dataset> {
        if labels.len() != self.sample_count() {
            return Err(Error::Precondition(format!(
                "{} labels for {} tensors",
                labels.len(),
                self.sample_count()
            )));
        }
        let samples = self
            .tensors()
            .zip(labels)
            .map(|(t, &l)| CsiSample::from_f64(t, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(env_id, samples))
    }
}

#[derive(Debug, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> DictParser<'a> {
    fn err(&self, what: &str) -> Error {
        Error::Format(format!("npy header: {what} at offset {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected {:?}", c as char)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(self.err("unterminated string"));
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).map_err(|_| self.err("non-UTF-8 string"))?;
        self.pos += 1;
        Ok(text.to_owned())
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        // Python 2 era writers emit `10L`.
        let digits = &self.s[start..self.pos];
        if self.s.get(self.pos) == Some(&b'L') {
            self.pos += 1;
        }
        std::str::from_utf8(digits)
            .ok()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| self.err("expected integer"))
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    dims.push(self.integer()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(self.err("malformed shape tuple")),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            Some(b'T') if self.s[self.pos..].starts_with(b"True") => {
                self.pos += 4;
                Ok(Value::Bool(true))
            }
            Some(b'F') if self.s[self.pos..].starts_with(b"False") => {
                self.pos += 5;
                Ok(Value::Bool(false))
            }
            _ => Err(self.err("unrecognized value")),
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value)>> {
        self.expect(b'{')?;
        let mut entries = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        Ok(entries)
    }
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn parse_header(text: &[u8]) -> Result<Header> {
    let entries = DictParser { s: text, pos: 0 }.dict()?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    for (key, value) in entries {
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => return Err(Error::Format(format!("npy header: unexpected entry {k:?}: {v:?}"))),
        }
    }
    let descr = descr.ok_or_else(|| Error::Format("npy header: missing 'descr'".into()))?;
    let fortran = fortran.ok_or_else(|| Error::Format("npy header: missing 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::Format("npy header: missing 'shape'".into()))?;
    if fortran {
        return Err(Error::Unsupported("Fortran-order arrays".into()));
    }
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => return Err(Error::Unsupported(format!("dtype {other:?}"))),
    };
    let single = shape.as_slice() == TENSOR_SHAPE;
    let batch = shape.len() == 6 && shape[1..] == TENSOR_SHAPE;
    if !single && !batch {
        return Err(Error::Shape(format!(
            "shape {shape:?} is neither (5, 30, 3, 3, 2) nor (N, 5, 30, 3, 3, 2)"
        )));
    }
    Ok(Header { dtype, shape })
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyTensor> {
    if bytes.len() < MAGIC.len() || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing \\x93NUMPY magic".into()));
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Truncation {
            expected: PREAMBLE_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::Unsupported(format!("NPY version {major}.{minor}")));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(Error::Truncation {
            expected: data_start as u64,
            actual: bytes.len() as u64,
        });
    }
    let header = parse_header(&bytes[PREAMBLE_LEN..data_start])?;
    let count: usize = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape("element count overflows".into()))?;
    let expected = count
        .checked_mul(header.dtype.size())
        .and_then(|n| n.checked_add(data_start))
        .ok_or_else(|| Error::Shape("byte count overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncation {
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[data_start..];
    let data = match header.dtype {
        Dtype::F4 => body
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect(),
        Dtype::F8 => body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok(NpyTensor {
        shape: header.shape,
        dtype: header.dtype,
        data,
    })
}

pub fn read_npy<R: Read>(mut source: R) -> Result<NpyTensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes).map_err(Error::io)?;
    parse_npy(&bytes)
}

/// Encoded header (preamble plus padded dict) for a float32 batch of `n`.
pub fn header_bytes(n: usize) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({n}, {}, {}, {}, {}, {}), }}",
        TENSOR_SHAPE[0], TENSOR_SHAPE[1], TENSOR_SHAPE[2], TENSOR_SHAPE[3], TENSOR_SHAPE[4]
    );
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - PREAMBLE_LEN;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    out
}

/// Writes the dataset's tensors as an `(N, 5, 30, 3, 3, 2)` float32 array.
/// Labels are not representable in NPY and are dropped.
pub fn write_npy<W: Write>(dataset: &Dataset, mut sink: W) -> Result<u64> {
    if dataset.is_empty() {
        return Err(Error::Precondition("cannot write an empty dataset as NPY".into()));
    }
    let header = header_bytes(dataset.len());
    let mut written = 0u64;
    let mut put = |bytes: &[u8], written: &mut u64| -> Result<()> {
        sink.write_all(bytes).map_err(|source| Error::Io {
            bytes_written: *written,
            source,
        })?;
        *written += bytes.len() as u64;
        Ok(())
    };
    put(&header, &mut written)?;
    let mut buf = Vec::with_capacity(TENSOR_LEN * 4);
    for sample in &dataset.samples {
        buf.clear();
        for v in sample.raw() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf, &mut written)?;
    }
    Ok(written)
}
