//! Minimal NPY (format version 1.0) reader and writer.
//!
//! Reads little-endian `<f4`, `<f8`, `|u1` and `|b1` payloads in C order.
//! Writes `<f4` for fields and `|u1` for masks, with the header padded so the
//! payload starts on a 64-byte boundary, matching what numpy emits.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Widen the payload to f64. Bytes and booleans map to 0/1.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            NpyData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::F64(v) => v.clone(),
            NpyData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
            NpyData::Bool(v) => v.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Interpret the payload as a validity mask: nonzero means valid.
    pub fn to_bool(&self) -> Vec<bool> {
        match &self.data {
            NpyData::F32(v) => v.iter().map(|&x| x != 0.0).collect(),
            NpyData::F64(v) => v.iter().map(|&x| x != 0.0).collect(),
            NpyData::U8(v) => v.iter().map(|&x| x != 0).collect(),
            NpyData::Bool(v) => v.clone(),
        }
    }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_npy(&bytes)
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader("missing NPY magic".into()));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::MalformedHeader("truncated header length".into()));
            }
            let n = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
            (n, 12)
        }
        v => return Err(Error::MalformedHeader(format!("unsupported version {v}"))),
    };
    let end = offset + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader("header runs past end of file".into()));
    }
    let header = std::str::from_utf8(&bytes[offset..end])
        .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
    let descr =
        dict_value(header, "descr").and_then(quoted).ok_or_else(|| Error::MalformedHeader("missing descr".into()))?;
    let fortran =
        dict_value(header, "fortran_order").ok_or_else(|| Error::MalformedHeader("missing fortran_order".into()))?;
    if fortran.starts_with("True") {
        return Err(Error::MalformedHeader("fortran_order arrays are not supported".into()));
    }
    let shape = dict_value(header, "shape")
        .ok_or_else(|| Error::MalformedHeader("missing shape".into()))
        .and_then(parse_shape)?;

    let count: usize = shape.iter().product();
    let payload = &bytes[end..];
    let item = match descr {
        "<f4" | "f4" => 4,
        "<f8" | "f8" => 8,
        "|u1" | "u1" | "<u1" | "|b1" | "b1" => 1,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    if payload.len() != count * item {
        return Err(Error::ShapeMismatch(format!(
            "header shape {:?} needs {} bytes, payload has {}",
            shape,
            count * item,
            payload.len()
        )));
    }
    let data = match descr {
        "<f4" | "f4" => {
            NpyData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        "<f8" | "f8" => NpyData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect(),
        ),
        "|b1" | "b1" => NpyData::Bool(payload.iter().map(|&b| b != 0).collect()),
        _ => NpyData::U8(payload.to_vec()),
    };
    Ok(NpyArray { shape, data })
}

fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat_single = format!("'{key}'");
    let pat_double = format!("\"{key}\"");
    let start = header
        .find(&pat_single)
        .map(|i| i + pat_single.len())
        .or_else(|| header.find(&pat_double).map(|i| i + pat_double.len()))?;
    let rest = header[start..].trim_start();
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start())
}

fn quoted(s: &str) -> Option<&str> {
    let q = s.chars().next()?;
    if q != '\'' && q != '"' {
        return None;
    }
    let body = &s[1..];
    let end = body.find(q)?;
    Some(&body[..end])
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let s = s.strip_prefix('(').ok_or_else(|| Error::MalformedHeader("shape is not a tuple".into()))?;
    let close = s.find(')').ok_or_else(|| Error::MalformedHeader("unterminated shape tuple".into()))?;
    s[..close]
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad shape entry {t:?}")))
        })
        .collect()
}

fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn encode_f32(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = header_bytes("<f4", shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_u8(shape: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = header_bytes("|u1", shape);
    out.extend_from_slice(data);
    Ok(out)
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::ShapeMismatch(format!("shape {shape:?} holds {expected} values, got {len}")));
    }
    Ok(())
}

pub fn write_f32(path: impl AsRef<Path>, shape: &[usize], data: &[f32]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_f32(shape, data)?)
}

/// Narrows f64 values to the f32 storage type.
pub fn write_f64_as_f32(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let narrowed: Vec<f32> = data.iter().map(|&v| v as f32).collect();
    write_f32(path, shape, &narrowed)
}

pub fn write_u8(path: impl AsRef<Path>, shape: &[usize], data: &[u8]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_u8(shape, data)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
