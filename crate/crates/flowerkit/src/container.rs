//! FLW1: a dependency-free binary container for named dense arrays plus a
//! small text metadata block.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   "FLW1" | u32 version (= 1) | u32 record count | u32 reserved (= 0)
//! record   u32 name length | name (UTF-8) | u8 dtype (1 = f32, 2 = f64)
//!          | u8 rank | rank x u64 dims | u32 CRC-32 of payload | payload
//! meta     u64 length | text | u32 CRC-32 of text
//! ```
//!
//! Records are sorted by name and the metadata text is `key=value` lines
//! sorted by key, so equal content always serialises to equal bytes. The
//! full grammar is in `docs/flw1.md`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 4] = b"FLW1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate record name `{0}`")]
    NameCollision(String),
    #[error("invalid name `{0}`: names must match [A-Za-z0-9._-]+")]
    InvalidName(String),
    #[error("invalid metadata entry `{key}`: {detail}")]
    InvalidMeta { key: String, detail: String },
    #[error("array `{name}`: shape {shape:?} needs {expected} values, got {got}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: u64 },
    #[error("unsupported version {version} at offset {offset}")]
    VersionUnsupported { version: u32, offset: u64 },
    #[error("checksum mismatch for {section} at offset {offset} (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch {
        section: String,
        offset: u64,
        stored: u32,
        computed: u32,
    },
    #[error("file truncated at offset {offset}: needed {needed} more bytes")]
    TruncatedFile { offset: u64, needed: u64 },
    #[error("malformed file at offset {offset}: {detail}")]
    Malformed { offset: u64, detail: String },
}

pub type Result<T, E = ContainerError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tag(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 1,
            ArrayData::F64(_) => 2,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    /// Bitwise equality (distinguishes NaN payloads and signed zeros).
    pub fn bits_eq(&self, other: &ArrayData) -> bool {
        match (self, other) {
            (ArrayData::F32(a), ArrayData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ArrayData::F64(a), ArrayData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// A dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: ArrayData,
}

impl Array {
    pub fn new(shape: &[usize], data: ArrayData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.len() > u8::MAX as usize {
            return Err(ContainerError::ShapeMismatch {
                name: String::new(),
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn f32(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(shape, ArrayData::F32(data))
    }

    pub fn f64(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(shape, ArrayData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn into_data(self) -> ArrayData {
        self.data
    }

    pub fn bits_eq(&self, other: &Array) -> bool {
        self.shape == other.shape && self.data.bits_eq(&other.data)
    }
}

pub type TensorMap = BTreeMap<String, Array>;
pub type Meta = BTreeMap<String, String>;

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

fn check_meta(meta: &Meta) -> Result<()> {
    for (k, v) in meta {
        if !valid_name(k) {
            return Err(ContainerError::InvalidMeta {
                key: k.clone(),
                detail: "keys must match [A-Za-z0-9._-]+".into(),
            });
        }
        if v.contains(['\n', '\r']) {
            return Err(ContainerError::InvalidMeta {
                key: k.clone(),
                detail: "values must not contain line breaks".into(),
            });
        }
    }
    Ok(())
}

fn meta_text(meta: &Meta) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Serialises `records` (any order, names unique) and `meta`.
pub fn encode(records: &[(String, Array)], meta: &Meta) -> Result<Vec<u8>> {
    let mut sorted: Vec<&(String, Array)> = records.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(ContainerError::NameCollision(w[0].0.clone()));
        }
    }
    for (name, _) in &sorted {
        if !valid_name(name) {
            return Err(ContainerError::InvalidName(name.clone()));
        }
    }
    check_meta(meta)?;
    let count = u32::try_from(sorted.len()).map_err(|_| ContainerError::Malformed {
        offset: 8,
        detail: "too many records".into(),
    })?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut payload = Vec::new();
    for (name, arr) in sorted {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(arr.data.tag());
        out.push(arr.shape.len() as u8);
        for &d in &arr.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        payload.clear();
        arr.data.write_le(&mut payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    let text = meta_text(meta);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&crc32fast::hash(text.as_bytes()).to_le_bytes());
    Ok(out)
}

/// [`encode`] for an already-keyed map.
pub fn encode_map(tensors: &TensorMap, meta: &Meta) -> Result<Vec<u8>> {
    let records: Vec<(String, Array)> = tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    encode(&records, meta)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(ContainerError::TruncatedFile {
                offset: self.pos as u64,
                needed: (n - left) as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn malformed(&self, at: usize, detail: impl Into<String>) -> ContainerError {
        ContainerError::Malformed {
            offset: at as u64,
            detail: detail.into(),
        }
    }
}

fn parse_meta(text: &str, offset: usize) -> Result<Meta> {
    let mut meta = Meta::new();
    let mut pos = offset;
    let mut prev: Option<&str> = None;
    let bad = |at: usize, d: String| ContainerError::Malformed {
        offset: at as u64,
        detail: d,
    };
    for line in text.split_inclusive('\n') {
        let Some(body) = line.strip_suffix('\n') else {
            return Err(bad(pos, "metadata line without terminating newline".into()));
        };
        let Some((k, v)) = body.split_once('=') else {
            return Err(bad(pos, format!("metadata line `{body}` has no `=`")));
        };
        if !valid_name(k) || v.contains('\r') {
            return Err(bad(pos, format!("invalid metadata entry `{body}`")));
        }
        if prev.is_some_and(|p| p >= k) {
            return Err(bad(pos, format!("metadata key `{k}` out of order")));
        }
        prev = Some(k);
        meta.insert(k.to_string(), v.to_string());
        pos += line.len();
    }
    Ok(meta)
}

/// Exact inverse of [`encode`]; rejects anything [`encode`] cannot produce.
pub fn decode(bytes: &[u8]) -> Result<(TensorMap, Meta)> {
    let mut r = Reader { bytes, pos: 0 };
    let head = &bytes[..bytes.len().min(4)];
    if head != &MAGIC[..head.len()] {
        return Err(ContainerError::BadMagic { offset: 0 });
    }
    r.take(4)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::VersionUnsupported { version, offset: 4 });
    }
    let count = r.u32()?;
    if r.u32()? != 0 {
        return Err(r.malformed(12, "reserved header field is not zero"));
    }

    let mut tensors = TensorMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.malformed(at + 4, "record name is not UTF-8"))?
            .to_string();
        if !valid_name(&name) {
            return Err(r.malformed(at + 4, format!("invalid record name `{name}`")));
        }
        if prev.as_ref().is_some_and(|p| *p >= name) {
            return Err(r.malformed(at, format!("record `{name}` out of order or duplicated")));
        }
        let tag_at = r.pos;
        let tag = r.u8()?;
        let width = match tag {
            1 => 4,
            2 => 8,
            t => return Err(r.malformed(tag_at, format!("unknown dtype tag {t}"))),
        };
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let dim_at = r.pos;
            let d = r.u64()?;
            n = n
                .checked_mul(d)
                .filter(|n| n.checked_mul(width).is_some())
                .ok_or_else(|| r.malformed(dim_at, "array size overflows"))?;
            shape.push(d as usize);
        }
        let stored = r.u32()?;
        let payload_at = r.pos;
        let nbytes = usize::try_from(n * width).map_err(|_| r.malformed(payload_at, "payload too large"))?;
        let payload = r.take(nbytes)?;
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(ContainerError::ChecksumMismatch {
                section: format!("record `{name}`"),
                offset: payload_at as u64,
                stored,
                computed,
            });
        }
        let data = if tag == 1 {
            ArrayData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            ArrayData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        prev = Some(name.clone());
        tensors.insert(name, Array { shape, data });
    }

    let meta_len_at = r.pos;
    let len = usize::try_from(r.u64()?).map_err(|_| r.malformed(meta_len_at, "metadata too large"))?;
    let text_at = r.pos;
    let text = r.take(len)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(text);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch {
            section: "metadata".into(),
            offset: text_at as u64,
            stored,
            computed,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.malformed(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let text = std::str::from_utf8(text).map_err(|_| r.malformed(text_at, "metadata is not UTF-8"))?;
    let meta = parse_meta(text, text_at)?;
    Ok((tensors, meta))
}

pub fn write_container(path: &Path, records: &[(String, Array)], meta: &Meta) -> Result<()> {
    let bytes = encode(records, meta)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(TensorMap, Meta)> {
    decode(&fs::read(path)?)
}

/// SHA-256 (hex) of every record's little-endian payload, concatenated in
/// name order. Independent of metadata.
pub fn payload_digest(tensors: &TensorMap) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for arr in tensors.values() {
        buf.clear();
        arr.data.write_le(&mut buf);
        h.update(&buf);
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
