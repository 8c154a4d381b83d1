//! Named-tensor container (`.wts`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "FTSGWTS1"
//! header_len   u64      length of the header block that follows
//! header:
//!   meta_len   u32      followed by meta_len bytes of UTF-8 JSON (may be 0)
//!   count      u32
//!   count x:
//!     name_len u16, name (UTF-8)
//!     dtype    u8       0 = f32, 1 = f64
//!     ndim     u8, ndim x u64 dims
//!     offset   u64      byte offset into the payload
//!     nbytes   u64
//! payload      tensors back to back in header order
//! ```
//!
//! Offsets must be contiguous and the payload must end exactly after the
//! last tensor.

use std::any::TypeId;
use std::fs;
use std::io::Write;
use std::path::Path;

use ftseg_nn::Scalar;
use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"FTSGWTS1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err<T>(offset: usize, reason: impl Into<String>) -> Result<T, ArchiveError> {
    Err(ArchiveError::Parse {
        offset,
        reason: reason.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts into `dst` (resized to fit).
    pub fn copy_into<T: Scalar>(&self, dst: &mut Vec<T>) {
        dst.clear();
        match self {
            TensorData::F32(v) => dst.extend(v.iter().map(|&x| T::from_f64_lossy(x as f64))),
            TensorData::F64(v) => dst.extend(v.iter().map(|&x| T::from_f64_lossy(x))),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
    pub fn bit_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl ArchiveTensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    /// Stores `values` at their native precision.
    pub fn from_scalars<T: Scalar>(shape: Vec<usize>, values: &[T]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let data = if TypeId::of::<T>() == TypeId::of::<f32>() {
            TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect())
        } else {
            TensorData::F64(values.iter().map(|v| v.as_f64()).collect())
        };
        Self { shape, data }
    }

    pub fn count(&self) -> usize {
        self.data.len()
    }
}

/// Ordered map from tensor name to tensor, plus a free-form JSON metadata string.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    tensors: IndexMap<String, ArchiveTensor>,
    pub metadata: String,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor; insertion order is kept.
    pub fn insert(&mut self, name: &str, tensor: ArchiveTensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArchiveTensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Same names, shapes, dtypes and bit patterns (metadata ignored).
    pub fn tensors_bit_eq(&self, other: &WeightArchive) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((na, a), (nb, b))| {
                na == nb && a.shape == b.shape && a.data.bit_eq(&b.data)
            })
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.tensors.values() {
            t.data.write_le(&mut out);
        }
        out
    }

    /// Hex SHA-256 of the payload section.
    pub fn payload_sha256(&self) -> String {
        hex_digest(&self.payload_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Vec::new();
        header.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        header.extend_from_slice(self.metadata.as_bytes());
        header.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            header.extend_from_slice(&(name.len() as u16).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.push(t.data.dtype().code());
            header.push(t.shape.len() as u8);
            for &d in &t.shape {
                header.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let nbytes = (t.count() * t.data.dtype().size()) as u64;
            header.extend_from_slice(&offset.to_le_bytes());
            header.extend_from_slice(&nbytes.to_le_bytes());
            offset += nbytes;
        }
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return parse_err(0, "bad magic (not a .wts archive)");
        }
        let header_len = r.u64()? as usize;
        let header_start = r.pos;
        let Some(payload_start) = header_start.checked_add(header_len).filter(|&e| e <= bytes.len())
        else {
            return parse_err(r.pos, format!("header length {header_len} exceeds file size"));
        };
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let metadata = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| ArchiveError::Parse {
                offset: meta_at,
                reason: "metadata is not UTF-8".into(),
            })?
            .to_string();
        let count = r.u32()? as usize;
        let payload_len = bytes.len() - payload_start;
        let mut tensors = IndexMap::with_capacity(count.min(1 << 16));
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let entry_at = r.pos;
            let name_len = r.u16()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ArchiveError::Parse {
                    offset: name_at,
                    reason: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let dtype_at = r.pos;
            let code = r.u8()?;
            let Some(dtype) = DType::from_code(code) else {
                return parse_err(dtype_at, format!("unknown dtype code {code} for `{name}`"));
            };
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            let nbytes = r.u64()? as usize;
            if r.pos > payload_start {
                return parse_err(entry_at, "tensor entry extends past the header");
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ArchiveError::Parse {
                    offset: entry_at,
                    reason: format!("shape of `{name}` overflows"),
                })?;
            if count.checked_mul(dtype.size()) != Some(nbytes) {
                return parse_err(
                    entry_at,
                    format!("`{name}`: {nbytes} bytes declared for shape {shape:?}"),
                );
            }
            if offset != expected_offset {
                return parse_err(entry_at, format!("`{name}`: payload offsets are not contiguous"));
            }
            if offset + nbytes > payload_len {
                return parse_err(
                    payload_start + payload_len,
                    format!("payload truncated inside `{name}`"),
                );
            }
            expected_offset += nbytes;
            let raw = &bytes[payload_start + offset..payload_start + offset + nbytes];
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
            };
            if tensors.contains_key(&name) {
                return parse_err(entry_at, format!("duplicate tensor name `{name}`"));
            }
            tensors.insert(name, ArchiveTensor { shape, data });
        }
        if r.pos != payload_start {
            return parse_err(r.pos, "header length does not match its entries");
        }
        if expected_offset != payload_len {
            return parse_err(
                payload_start + expected_offset,
                format!("{} trailing payload bytes", payload_len - expected_offset),
            );
        }
        Ok(Self { tensors, metadata })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Writes via a temporary sibling file and an atomic rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        write_atomic(path.as_ref(), &self.to_bytes()).map_err(|source| ArchiveError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write-to-temp-then-rename so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => parse_err(self.pos, format!("truncated: needed {n} more bytes")),
        }
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightArchive {
        let mut a = WeightArchive::new();
        a.insert(
            "enc.conv0.weight",
            ArchiveTensor::f32(vec![32, 3, 3, 3], (0..864).map(|i| i as f32 * 0.5).collect()),
        );
        a
    }

    #[test]
    fn single_tensor_archive_parses() {
        let a = WeightArchive::from_bytes(&sample().to_bytes()).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.get("enc.conv0.weight").unwrap().count(), 864);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut a = WeightArchive::new();
        a.insert("x", ArchiveTensor::f32(vec![1], vec![1.0]));
        a.insert("y", ArchiveTensor::f32(vec![1], vec![2.0]));
        let mut bytes = a.to_bytes();
        let y_at = bytes.iter().rposition(|&b| b == b'y').unwrap();
        bytes[y_at] = b'x';
        let err = WeightArchive::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_dtype_reports_its_offset() {
        let mut bytes = sample().to_bytes();
        // dtype byte follows magic(8) + header_len(8) + meta_len(4) + count(4)
        // + name_len(2) + name(16)
        let at = 8 + 8 + 4 + 4 + 2 + 16;
        bytes[at] = 7;
        match WeightArchive::from_bytes(&bytes).unwrap_err() {
            ArchiveError::Parse { offset, reason } => {
                assert_eq!(offset, at);
                assert!(reason.contains("dtype"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 100, 20, 3] {
            assert!(WeightArchive::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(WeightArchive::from_bytes(&bytes).is_err());
    }

    #[test]
    fn metadata_round_trips() {
        let mut a = sample();
        a.metadata = r#"{"source":"unit"}"#.into();
        a.insert("d", ArchiveTensor::from_scalars(vec![2], &[1.5f64, -0.0]));
        let b = WeightArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert!(a.tensors_bit_eq(&b));
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
