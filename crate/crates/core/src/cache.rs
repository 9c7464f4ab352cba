//! Binary cache files for trace sets and prepared surprise state.
//!
//! Every file is a 48-byte header followed by a payload:
//!
//! ```text
//! magic        8 bytes  kind-specific, e.g. "SA-AT\0\0\0"
//! version      u32 LE   currently 1
//! reserved     u32 LE   zero
//! rows         u64 LE   N
//! cols         u64 LE   D (class count for label files)
//! checksum     u64 LE   first 8 bytes of SHA-256 over the payload
//! payload_len  u64 LE
//! payload
//! ```
//!
//! Trace payloads are row-major little-endian `f64`; label payloads are `u64`.
//! Writes go through a temporary file and a rename, so readers never see a
//! half-written entry. Concurrent writers to the same name race; the last
//! rename wins.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Result, SaError};
use crate::trace::TraceSet;

pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Traces,
    Labels,
    Kde,
    Dsa,
}

impl Kind {
    pub fn magic(self) -> [u8; 8] {
        match self {
            Kind::Traces => *b"SA-AT\0\0\0",
            Kind::Labels => *b"SA-LBL\0\0",
            Kind::Kde => *b"SA-KDE\0\0",
            Kind::Dsa => *b"SA-DSA\0\0",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Kind::Traces => "at",
            Kind::Labels => "lbl",
            Kind::Kde => "kde",
            Kind::Dsa => "dsa",
        }
    }
}

/// A decoded cache file: header fields plus the verified payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub kind: Kind,
    pub rows: u64,
    pub cols: u64,
    pub payload: Vec<u8>,
}

pub fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl Entry {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.kind.magic());
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        out.extend_from_slice(&checksum(&self.payload).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes and verifies an entry of the expected kind. `Err` carries the
    /// reason; callers attach the path.
    pub fn decode(bytes: &[u8], kind: Kind) -> std::result::Result<Entry, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("{} bytes is shorter than the header", bytes.len()));
        }
        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if bytes[..8] != kind.magic() {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let (rows, cols, sum, len) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40));
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != len {
            return Err(format!(
                "payload is {} bytes, header says {len}",
                payload.len()
            ));
        }
        if checksum(payload) != sum {
            return Err("checksum failure".into());
        }
        Ok(Entry {
            kind,
            rows,
            cols,
            payload: payload.to_vec(),
        })
    }
}

/// Little-endian field writer for cache payloads.
#[derive(Debug, Default)]
pub struct PayloadWriter(Vec<u8>);

impl PayloadWriter {
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) -> &mut Self {
        for v in vs {
            self.f64(v);
        }
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

/// Counterpart of [`PayloadWriter`]; every read is bounds-checked.
#[derive(Debug)]
pub struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        PayloadReader { buf, pos: 0 }
    }

    pub fn bytes(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("payload truncated at byte {}", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("value {v} does not fit in usize"))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let len = n.checked_mul(8).ok_or("length overflow")?;
        Ok(self
            .bytes(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> std::result::Result<(), String> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            ))
        }
    }
}

/// Rejects names that would escape the cache directory.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name != "." && name != ".." && !name.contains(['/', '\\', '\0']);
    if ok {
        Ok(())
    } else {
        Err(SaError::InvalidCacheName(name.to_string()))
    }
}

pub fn entry_path(dir: &Path, name: &str, kind: Kind) -> PathBuf {
    dir.join(format!("{name}.{}", kind.extension()))
}

/// Atomically replaces `path` with `bytes`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SaError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| SaError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SaError::io(path, e))
}

/// Reads and verifies an entry; a missing file is a cache miss.
pub fn read_entry(path: &Path, kind: Kind) -> Result<Entry> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(SaError::CacheMiss(path.display().to_string()))
        }
        Err(e) => return Err(SaError::io(path, e)),
    };
    Entry::decode(&bytes, kind).map_err(|reason| SaError::CorruptCache {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn encode_traces(t: &TraceSet) -> Vec<u8> {
    let mut w = PayloadWriter::default();
    w.f64s(t.traces().iter().copied());
    Entry {
        kind: Kind::Traces,
        rows: t.len() as u64,
        cols: t.dim() as u64,
        payload: w.finish(),
    }
    .encode()
}

pub fn encode_labels(t: &TraceSet) -> Vec<u8> {
    let mut w = PayloadWriter::default();
    for &l in t.labels() {
        w.u64(l as u64);
    }
    Entry {
        kind: Kind::Labels,
        rows: t.len() as u64,
        cols: t.num_classes() as u64,
        payload: w.finish(),
    }
    .encode()
}

/// Decodes a `.at` file into its matrix.
pub fn decode_traces(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    let e = Entry::decode(bytes, Kind::Traces)?;
    let rows = usize::try_from(e.rows).map_err(|_| "row count overflow")?;
    let cols = usize::try_from(e.cols).map_err(|_| "column count overflow")?;
    let count = rows.checked_mul(cols).ok_or("shape overflow")?;
    let mut r = PayloadReader::new(&e.payload);
    let values = r.f64s(count)?;
    r.finish()?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())
}

/// Decodes a `.lbl` file into `(labels, num_classes)`.
pub fn decode_labels(bytes: &[u8]) -> std::result::Result<(Vec<usize>, usize), String> {
    let e = Entry::decode(bytes, Kind::Labels)?;
    let rows = usize::try_from(e.rows).map_err(|_| "row count overflow")?;
    let num_classes = usize::try_from(e.cols).map_err(|_| "class count overflow")?;
    if e.payload.len() != rows.checked_mul(8).ok_or("row count overflow")? {
        return Err(format!("label payload does not hold {rows} labels"));
    }
    let mut r = PayloadReader::new(&e.payload);
    let labels = (0..rows)
        .map(|_| r.usize())
        .collect::<std::result::Result<_, _>>()?;
    Ok((labels, num_classes))
}

/// Writes `<dir>/<name>.at` and `<dir>/<name>.lbl`, replacing any previous
/// entry of the same name.
pub fn cache_store(t: &TraceSet, dir: &Path) -> Result<()> {
    validate_name(t.name())?;
    write_file(&entry_path(dir, t.name(), Kind::Traces), &encode_traces(t))?;
    write_file(&entry_path(dir, t.name(), Kind::Labels), &encode_labels(t))
}

pub fn cache_load(name: &str, dir: &Path) -> Result<TraceSet> {
    validate_name(name)?;
    let load = |kind: Kind| -> Result<(PathBuf, Vec<u8>)> {
        let path = entry_path(dir, name, kind);
        match fs::read(&path) {
            Ok(b) => Ok((path, b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(SaError::CacheMiss(name.to_string()))
            }
            Err(e) => Err(SaError::io(&path, e)),
        }
    };
    let (at_path, at) = load(Kind::Traces)?;
    let (lbl_path, lbl) = load(Kind::Labels)?;
    let corrupt = |path: PathBuf| move |reason: String| SaError::CorruptCache { path, reason };
    let traces = decode_traces(&at).map_err(corrupt(at_path))?;
    let (labels, num_classes) = decode_labels(&lbl).map_err(corrupt(lbl_path.clone()))?;
    TraceSet::new(traces, labels, Some(num_classes), name).map_err(|e| SaError::CorruptCache {
        path: lbl_path,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(name: &str, scale: f64) -> TraceSet {
        let rows = vec![
            vec![0.1 * scale, -0.0],
            vec![1e-310, 3.0],
            vec![f64::MAX, 0.5],
        ];
        TraceSet::from_rows(&rows, vec![0, 2, 1], Some(4), name).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample("train", 1.0);
        cache_store(&t, dir.path()).unwrap();
        let back = cache_load("train", dir.path()).unwrap();
        assert_eq!(back, t);
        for (a, b) in back.traces().iter().zip(t.traces().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.num_classes(), 4);
    }

    #[test]
    fn miss_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            cache_load("nope", dir.path()),
            Err(SaError::CacheMiss(_))
        ));
        cache_store(&sample("x", 1.0), dir.path()).unwrap();
        cache_store(&sample("x", 2.0), dir.path()).unwrap();
        assert_eq!(cache_load("x", dir.path()).unwrap(), sample("x", 2.0));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        cache_store(&sample("c", 1.0), dir.path()).unwrap();
        let path = entry_path(dir.path(), "c", Kind::Traces);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        let err = cache_load("c", dir.path()).unwrap_err();
        assert!(
            matches!(err, SaError::CorruptCache { ref reason, .. } if reason.contains("checksum"))
        );
    }

    #[test]
    fn rejects_path_like_names() {
        for name in ["", "..", "a/b", "a\\b"] {
            assert!(validate_name(name).is_err(), "{name:?}");
        }
    }

    #[test]
    fn header_fields() {
        let bytes = encode_traces(&sample("h", 1.0));
        assert_eq!(&bytes[..8], b"SA-AT\0\0\0");
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 2 * 8);
        assert!(Entry::decode(&bytes, Kind::Labels).is_err());
        assert!(Entry::decode(&bytes[..HEADER_LEN + 7], Kind::Traces).is_err());
    }
}
