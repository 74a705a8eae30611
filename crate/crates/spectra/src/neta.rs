//! NETA: a minimal archive of named little-endian tensors.
//!
//! Layout:
//!
//! | bytes          | content                                        |
//! |----------------|------------------------------------------------|
//! | 0..4           | magic `NETA`                                   |
//! | 4..8           | version, u32 LE (= 1)                          |
//! | 8..16          | header length `H`, u64 LE                      |
//! | 16..16+H       | UTF-8 JSON array of tensor descriptors         |
//! | align64(16+H)..| payload region                                 |
//!
//! Each descriptor is `{"name","dtype","shape","offset","nbytes"}` with
//! `offset` relative to the start of the payload region and a multiple of 64.
//! Payloads are row-major; padding bytes are zero. An archive without
//! tensors ends right after its header.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spectra_core::Matrix;

pub const MAGIC: &[u8; 4] = b"NETA";
pub const VERSION: u32 = 1;
pub const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum NetaError {
    #[error("not a NETA archive (bad magic)")]
    BadMagic,
    #[error("unsupported NETA version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated archive: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("tensor `{name}`: shape implies {expected} bytes, header declares {declared}")]
    LengthMismatch { name: String, expected: u64, declared: u64 },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}`: {msg}")]
    InvalidTensor { name: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetaError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
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

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
        }
    }

    /// Equality of the underlying bit patterns (NaN-aware).
    pub fn bits_eq(&self, other: &Self) -> bool {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(NetaError::InvalidTensor {
                name,
                msg: "shape dimensions must be positive".into(),
            });
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(NetaError::InvalidTensor {
                name,
                msg: format!("shape {shape:?} holds {count} values, data has {}", data.len()),
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn nbytes(&self) -> usize {
        self.data.len() * self.dtype().size()
    }

    /// Rank-2 tensor as a matrix (values widened to f64).
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape[..] {
            [rows, cols] => Ok(Matrix::from_row_slice(rows, cols, &self.data.to_f64())),
            _ => Err(NetaError::InvalidTensor {
                name: self.name.clone(),
                msg: format!("expected a rank-2 tensor, got shape {:?}", self.shape),
            }),
        }
    }

    /// Single value of a one-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        match self.data.to_f64()[..] {
            [x] => Ok(x),
            _ => Err(NetaError::InvalidTensor {
                name: self.name.clone(),
                msg: "expected a single value".into(),
            }),
        }
    }
}

pub fn matrix_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    name: String,
    dtype: DType,
    shape: Vec<u64>,
    offset: u64,
    nbytes: u64,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tensor: Tensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(NetaError::DuplicateName(tensor.name));
        }
        self.entries.push(tensor);
        Ok(())
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.insert(Tensor::new(name, shape, TensorData::F64(data))?)
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Matrix) -> Result<()> {
        self.insert_f64(name, vec![m.nrows(), m.ncols()], matrix_row_major(m))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|t| t.name == name)
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|t| t.name.as_str())
    }

    /// Serialized bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut descriptors = Vec::with_capacity(self.entries.len());
        let mut offset = 0usize;
        for (i, t) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|o| o.name == t.name) {
                return Err(NetaError::DuplicateName(t.name.clone()));
            }
            descriptors.push(Descriptor {
                name: t.name.clone(),
                dtype: t.dtype(),
                shape: t.shape.iter().map(|&s| s as u64).collect(),
                offset: offset as u64,
                nbytes: t.nbytes() as u64,
            });
            offset = align_up(offset + t.nbytes());
        }
        let header = serde_json::to_vec(&descriptors).map_err(|e| NetaError::BadHeader(e.to_string()))?;
        let payload_start = align_up(PREAMBLE + header.len());
        let mut out = Vec::with_capacity(payload_start + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (t, d) in self.entries.iter().zip(&descriptors) {
            out.resize(payload_start + d.offset as usize, 0);
            t.data.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(NetaError::Truncated("missing magic".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(NetaError::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(NetaError::Truncated("incomplete preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(NetaError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let available = (bytes.len() - PREAMBLE) as u64;
        if header_len > available {
            return Err(NetaError::Truncated(format!(
                "header declares {header_len} bytes, {available} available"
            )));
        }
        let header_end = PREAMBLE + header_len as usize;
        let descriptors: Vec<Descriptor> =
            serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| NetaError::BadHeader(e.to_string()))?;
        let payload_start = align_up(header_end);
        let payload = bytes.get(payload_start..).unwrap_or(&[]);

        let mut archive = TensorArchive::new();
        for d in descriptors {
            let shape: Vec<usize> = d
                .shape
                .iter()
                .map(|&s| usize::try_from(s).map_err(|_| NetaError::BadHeader(format!("dimension {s} too large"))))
                .collect::<Result<_>>()?;
            let expected = shape
                .iter()
                .try_fold(d.dtype.size() as u64, |acc, &s| acc.checked_mul(s as u64))
                .ok_or_else(|| NetaError::BadHeader(format!("tensor `{}` is too large", d.name)))?;
            if expected != d.nbytes {
                return Err(NetaError::LengthMismatch {
                    name: d.name,
                    expected,
                    declared: d.nbytes,
                });
            }
            if d.offset % ALIGN as u64 != 0 {
                return Err(NetaError::BadHeader(format!(
                    "tensor `{}` offset {} is not {ALIGN}-byte aligned",
                    d.name, d.offset
                )));
            }
            let end = d.offset.checked_add(d.nbytes).filter(|&e| e <= payload.len() as u64).ok_or_else(|| {
                NetaError::Truncated(format!(
                    "tensor `{}` needs bytes {}..{} of a {}-byte payload",
                    d.name,
                    d.offset,
                    d.offset.saturating_add(d.nbytes),
                    payload.len()
                ))
            })?;
            let data = TensorData::read_le(d.dtype, &payload[d.offset as usize..end as usize]);
            archive.insert(Tensor::new(d.name, shape, data)?)?;
        }
        Ok(archive)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }
}

/// Writes `archive` to `sink`, returning the number of bytes written.
pub fn write_archive<W: Write>(archive: &TensorArchive, mut sink: W) -> Result<u64> {
    let bytes = archive.to_bytes()?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len() as u64)
}

/// Reads a whole archive from `source`. Lengths in the header are checked
/// against the bytes actually present before anything is sliced.
pub fn read_archive<R: Read>(mut source: R) -> Result<TensorArchive> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    TensorArchive::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_only(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.resize(align_up(out.len()), 0);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn empty_archive_is_header_only() {
        let bytes = TensorArchive::new().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"NETA");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(&bytes[16..18], b"[]");
        assert_eq!(bytes.len(), 18);
        assert!(TensorArchive::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn f32_payload_layout() {
        let mut a = TensorArchive::new();
        a.insert(Tensor::new("w", vec![2, 2], TensorData::F32(vec![1.0, 2.0, 3.0, 4.0])).unwrap())
            .unwrap();
        let bytes = a.to_bytes().unwrap();
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + h]).unwrap();
        assert_eq!(header, r#"[{"name":"w","dtype":"f32","shape":[2,2],"offset":0,"nbytes":16}]"#);
        let start = align_up(16 + h);
        assert_eq!(start % 64, 0);
        let mut expected = Vec::new();
        for x in [1.0f32, 2.0, 3.0, 4.0] {
            expected.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(&bytes[start..], &expected[..]);
    }

    #[test]
    fn payloads_are_aligned() {
        let mut a = TensorArchive::new();
        a.insert_f64("a", vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        a.insert_f64("b", vec![1], vec![4.0]).unwrap();
        let bytes = a.to_bytes().unwrap();
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        assert_eq!(header[1]["offset"], 64);
        assert_eq!(TensorArchive::from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = TensorArchive::new().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::BadMagic)));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = TensorArchive::new().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::UnsupportedVersion(2))));
    }

    #[test]
    fn length_mismatch() {
        let bytes = header_only(
            r#"[{"name":"w","dtype":"f32","shape":[2,2],"offset":0,"nbytes":12}]"#,
            &[0u8; 12],
        );
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::LengthMismatch { .. })));
    }

    #[test]
    fn truncated_payload_and_header() {
        let bytes = header_only(
            r#"[{"name":"w","dtype":"f64","shape":[4],"offset":0,"nbytes":32}]"#,
            &[0u8; 16],
        );
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::Truncated(_))));

        let mut huge = Vec::new();
        huge.extend_from_slice(MAGIC);
        huge.extend_from_slice(&VERSION.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(TensorArchive::from_bytes(&huge), Err(NetaError::Truncated(_))));
        assert!(matches!(TensorArchive::from_bytes(b"NE"), Err(NetaError::Truncated(_))));
    }

    #[test]
    fn offsets_beyond_stream_rejected() {
        let bytes = header_only(
            r#"[{"name":"w","dtype":"f64","shape":[1],"offset":18446744073709551552,"nbytes":8}]"#,
            &[0u8; 8],
        );
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::Truncated(_))));
    }

    #[test]
    fn misaligned_offset_and_bad_json() {
        let bytes = header_only(
            r#"[{"name":"w","dtype":"f64","shape":[1],"offset":8,"nbytes":8}]"#,
            &[0u8; 16],
        );
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::BadHeader(_))));
        let bytes = header_only(r#"[{"name":"w","dtype":"i8"}]"#, &[]);
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::BadHeader(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = TensorArchive::new();
        a.insert_f64("x", vec![1], vec![1.0]).unwrap();
        assert!(matches!(a.insert_f64("x", vec![1], vec![2.0]), Err(NetaError::DuplicateName(_))));
        let bytes = header_only(
            r#"[{"name":"x","dtype":"f64","shape":[1],"offset":0,"nbytes":8},{"name":"x","dtype":"f64","shape":[1],"offset":64,"nbytes":8}]"#,
            &[0u8; 72],
        );
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(NetaError::DuplicateName(_))));
    }

    #[test]
    fn tensor_validation() {
        assert!(Tensor::new("z", vec![0, 2], TensorData::F64(vec![])).is_err());
        assert!(Tensor::new("z", vec![3], TensorData::F64(vec![1.0])).is_err());
        let scalar = Tensor::new("s", vec![], TensorData::F32(vec![0.5])).unwrap();
        assert_eq!(scalar.scalar().unwrap(), 0.5);
    }

    #[test]
    fn matrix_round_trip_is_row_major() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut a = TensorArchive::new();
        a.insert_matrix("m", &m).unwrap();
        assert_eq!(a.get("m").unwrap().data, TensorData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(a.get("m").unwrap().to_matrix().unwrap(), m);
    }

    #[test]
    fn stream_io() {
        let mut a = TensorArchive::new();
        a.insert_f64("v", vec![2], vec![0.25, -1.0]).unwrap();
        let mut buf = Vec::new();
        let n = write_archive(&a, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(read_archive(&buf[..]).unwrap(), a);
    }
}
