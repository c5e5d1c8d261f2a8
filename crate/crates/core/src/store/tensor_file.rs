//! The `ZSTN` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ZSTN" | version u32 | count u32 |
//!   count x ( name_len u16 | name utf8 | dtype u8 | ndim u8 | dims u64 x ndim | payload )
//! ```
//!
//! dtype codes: 0 = f64, 1 = f32, 2 = i8. Payload length is `product(dims)`
//! elements of the dtype. Decoding is strict: anything that would not
//! re-encode to the same bytes is rejected.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"ZSTN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
    I8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
            DType::I8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F64),
            1 => Some(DType::F32),
            2 => Some(DType::I8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F64(_) => DType::F64,
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn f64(name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Self {
        Self::new(name, dims, TensorData::F64(data))
    }

    pub fn i8(name: impl Into<String>, dims: Vec<u64>, data: Vec<i8>) -> Self {
        Self::new(name, dims, TensorData::I8(data))
    }

    /// Element count implied by `dims`, or `None` on overflow.
    pub fn numel(dims: &[u64]) -> Option<usize> {
        dims.iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
    }
}

fn check_finite(name: &str, data: &TensorData) -> std::result::Result<(), FormatError> {
    let bad = match data {
        TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
        TensorData::I8(_) => None,
    };
    match bad {
        Some(index) => Err(FormatError::NonFinite {
            name: name.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Serializes tensors in the given order.
pub fn encode(tensors: &[Tensor]) -> std::result::Result<Vec<u8>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| FormatError::BadTensor {
        name: String::new(),
        reason: "more than u32::MAX tensors".into(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if t.name.is_empty() || t.name.len() > u16::MAX as usize {
            return Err(FormatError::BadName);
        }
        if !seen.insert(t.name.as_str()) {
            return Err(FormatError::DuplicateName { name: t.name.clone() });
        }
        if t.dims.len() > u8::MAX as usize {
            return Err(FormatError::BadTensor {
                name: t.name.clone(),
                reason: format!("{} dims exceed the 255 limit", t.dims.len()),
            });
        }
        let expected = Tensor::numel(&t.dims).ok_or_else(|| FormatError::DimsOverflow { name: t.name.clone() })?;
        if expected != t.data.len() {
            return Err(FormatError::LengthMismatch {
                name: t.name.clone(),
                expected,
                found: t.data.len(),
            });
        }
        check_finite(&t.name, &t.data)?;
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.data.dtype().code());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
}

/// Parses a complete container.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Tensor>, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let count = u32::from_le_bytes(r.array()?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| FormatError::BadName)?;
        if name.is_empty() {
            return Err(FormatError::BadName);
        }
        if !seen.insert(name.to_string()) {
            return Err(FormatError::DuplicateName { name: name.to_string() });
        }
        let code = r.u8()?;
        let dtype = DType::from_code(code).ok_or_else(|| FormatError::BadDtype {
            name: name.to_string(),
            code,
        })?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(r.array()?));
        }
        let numel = Tensor::numel(&dims).ok_or_else(|| FormatError::DimsOverflow { name: name.to_string() })?;
        let nbytes = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| FormatError::DimsOverflow { name: name.to_string() })?;
        let payload = r.take(nbytes)?;
        let data = match dtype {
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            ),
            DType::I8 => TensorData::I8(payload.iter().map(|&b| b as i8).collect()),
        };
        check_finite(name, &data)?;
        out.push(Tensor::new(name, dims, data));
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            count: bytes.len() - r.pos,
        });
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    write_atomic(path, &bytes)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_set_is_header_only() {
        let b = encode(&[]).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(&b[..4], b"ZSTN");
        assert_eq!(decode(&b).unwrap(), vec![]);
    }

    #[test]
    fn payload_size_of_2x3_f64() {
        let t = Tensor::f64("W", vec![2, 3], (0..6).map(|i| i as f64).collect());
        let b = encode(std::slice::from_ref(&t)).unwrap();
        // header + name_len + "W" + dtype + ndim + 2 dims
        let descriptor = 12 + 2 + 1 + 1 + 1 + 16;
        assert_eq!(b.len() - descriptor, 48);
        assert_eq!(decode(&b).unwrap(), vec![t]);
    }

    #[test]
    fn all_dtypes_round_trip() {
        let ts = vec![
            Tensor::f64("a", vec![], vec![-0.0]),
            Tensor::new("b", vec![2, 0], TensorData::F32(vec![])),
            Tensor::new("c", vec![3], TensorData::F32(vec![1.5, -2.0, 1e-30])),
            Tensor::i8("é", vec![1, 1, 4], vec![-127, 0, 1, 127]),
        ];
        let b = encode(&ts).unwrap();
        let back = decode(&b).unwrap();
        assert_eq!(back, ts);
        assert_eq!(encode(&back).unwrap(), b);
    }

    #[test]
    fn distinct_errors() {
        let t = Tensor::f64("W", vec![2], vec![1.0, 2.0]);
        let good = encode(&[t.clone()]).unwrap();

        assert!(matches!(decode(&good[..good.len() - 1]), Err(FormatError::Truncated { .. })));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode(&bad),
            Err(FormatError::UnsupportedVersion { found: 2, supported: 1 })
        ));
        assert!(matches!(
            encode(&[t.clone(), t.clone()]),
            Err(FormatError::DuplicateName { .. })
        ));
        assert!(matches!(
            encode(&[Tensor::f64("W", vec![3], vec![1.0])]),
            Err(FormatError::LengthMismatch { expected: 3, found: 1, .. })
        ));
        assert!(matches!(
            encode(&[Tensor::f64("W", vec![1], vec![f64::NAN])]),
            Err(FormatError::NonFinite { index: 0, .. })
        ));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(FormatError::TrailingBytes { count: 1 })));

        // duplicate on the read side: patch the count and append a copy
        let mut dup = good.clone();
        dup[8] = 2;
        dup.extend_from_slice(&good[12..]);
        assert!(matches!(decode(&dup), Err(FormatError::DuplicateName { .. })));
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let mut b = encode(&[Tensor::f64("W", vec![1], vec![1.0])]).unwrap();
        // dim lives right after name_len(2) + "W"(1) + dtype + ndim
        let at = 12 + 2 + 1 + 2;
        b[at..at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode(&b), Err(FormatError::DimsOverflow { .. })));
        b[at..at + 8].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(decode(&b), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.zstn");
        let ts = vec![Tensor::f64("x", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])];
        write_tensors(&p, &ts).unwrap();
        assert_eq!(read_tensors(&p).unwrap(), ts);
        assert!(matches!(
            read_tensors(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
