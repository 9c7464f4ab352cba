//! Reading and writing the numpy `.npy` array format.
//!
//! Only the subset needed for activation traces is supported: little-endian
//! C-order arrays, `<f8` for trace matrices and a handful of integer dtypes
//! for label vectors. Versions 1.0, 2.0 and 3.0 headers are accepted; the
//! writer always emits version 1.0.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Result, SaError};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Header dictionaries larger than this are rejected outright.
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> SaError {
    SaError::Parse(format!("npy: {}", msg.into()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| bad(format!("truncated input ({e})")))
}

/// Reads the magic string, version and header dictionary.
pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 6];
    read_exact(r, &mut magic)?;
    if magic != MAGIC {
        return Err(bad("bad magic string"));
    }
    let mut version = [0u8; 2];
    read_exact(r, &mut version)?;
    let header_len = match version {
        [1, 0] => {
            let mut b = [0u8; 2];
            read_exact(r, &mut b)?;
            u16::from_le_bytes(b) as usize
        }
        [2, 0] | [3, 0] => {
            let mut b = [0u8; 4];
            read_exact(r, &mut b)?;
            u32::from_le_bytes(b) as usize
        }
        [major, minor] => return Err(bad(format!("unsupported version {major}.{minor}"))),
    };
    if header_len > MAX_HEADER_LEN {
        return Err(bad(format!("header length {header_len} too large")));
    }
    let mut text = vec![0u8; header_len];
    read_exact(r, &mut text)?;
    let text = std::str::from_utf8(&text).map_err(|_| bad("header is not utf-8"))?;
    parse_header_dict(text)
}

/// Parses the python-literal header dictionary, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (3, 2), }`.
pub fn parse_header_dict(text: &str) -> Result<Header> {
    let mut p = Lexer {
        s: text.trim_end_matches(['\n', ' ', '\0']).as_bytes(),
        pos: 0,
    };
    p.expect(b'{')?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.expect(b':')?;
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => return Err(bad(format!("unexpected key {other:?}"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(bad("trailing characters after header dictionary"));
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing 'fortran_order'"))?,
        shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
    })
}

struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(bad(format!(
                "expected '{}' at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(bad(format!("expected string at byte {}", self.pos))),
        };
        let start = self.pos + 1;
        let len = self.s[start..]
            .iter()
            .position(|&c| c == quote)
            .ok_or_else(|| bad("unterminated string"))?;
        self.pos = start + len + 1;
        Ok(String::from_utf8_lossy(&self.s[start..start + len]).into_owned())
    }

    fn boolean(&mut self) -> Result<bool> {
        self.skip_ws();
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err(bad("expected True or False"))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            let v = digits
                .parse::<usize>()
                .map_err(|_| bad(format!("bad shape entry at byte {start}")))?;
            dims.push(v);
            if !self.eat(b',') {
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

/// Reads exactly `count * width` payload bytes without trusting `count` for
/// the allocation size.
fn read_payload<R: Read>(r: &mut R, count: usize, width: usize) -> Result<Vec<u8>> {
    let want = count
        .checked_mul(width)
        .ok_or_else(|| bad("shape overflows"))?;
    let mut buf = Vec::new();
    r.take(want as u64)
        .read_to_end(&mut buf)
        .map_err(|e| bad(format!("reading payload: {e}")))?;
    if buf.len() != want {
        return Err(bad(format!(
            "payload has {} bytes, header promises {want}",
            buf.len()
        )));
    }
    Ok(buf)
}

/// Reads a 2-D `<f8` C-order matrix.
pub fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let header = read_header(r)?;
    if header.descr != "<f8" {
        return Err(bad(format!(
            "dtype {:?} unsupported, expected '<f8'",
            header.descr
        )));
    }
    if header.fortran_order {
        return Err(bad("fortran order unsupported"));
    }
    let [n, d] = header.shape[..] else {
        return Err(bad(format!(
            "expected a 2-D array, got shape {:?}",
            header.shape
        )));
    };
    let count = n.checked_mul(d).ok_or_else(|| bad("shape overflows"))?;
    let bytes = read_payload(r, count, 8)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((n, d), values).map_err(|e| bad(e.to_string()))
}

/// Reads a label vector: a 1-D array (or `N x 1` matrix) of non-negative
/// integers stored as `<i8`, `<i4`, `<u8`, `<u4`, `|u1` or integral `<f8`.
pub fn read_labels<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let header = read_header(r)?;
    if header.fortran_order && header.shape.len() > 1 {
        return Err(bad("fortran order unsupported"));
    }
    let n = match header.shape[..] {
        [n] | [n, 1] => n,
        _ => {
            return Err(bad(format!(
                "expected a label vector, got shape {:?}",
                header.shape
            )))
        }
    };
    let width = match header.descr.as_str() {
        "<i8" | "<u8" | "<f8" => 8,
        "<i4" | "<u4" => 4,
        "|u1" | "|i1" => 1,
        other => return Err(bad(format!("label dtype {other:?} unsupported"))),
    };
    let bytes = read_payload(r, n, width)?;
    bytes
        .chunks_exact(width)
        .enumerate()
        .map(|(i, c)| {
            let v: Option<u64> = match header.descr.as_str() {
                "<i8" => u64::try_from(i64::from_le_bytes(c.try_into().unwrap())).ok(),
                "<u8" => Some(u64::from_le_bytes(c.try_into().unwrap())),
                "<f8" => {
                    let f = f64::from_le_bytes(c.try_into().unwrap());
                    (f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(53)).then_some(f as u64)
                }
                "<i4" => u64::try_from(i32::from_le_bytes(c.try_into().unwrap())).ok(),
                "<u4" => Some(u32::from_le_bytes(c.try_into().unwrap()) as u64),
                "|i1" => u64::try_from(c[0] as i8).ok(),
                _ => Some(c[0] as u64),
            };
            v.and_then(|v| usize::try_from(v).ok())
                .ok_or_else(|| bad(format!("label at index {i} is not a non-negative integer")))
        })
        .collect()
}

fn write_header<W: Write>(w: &mut W, descr: &str, shape: &[usize]) -> std::io::Result<()> {
    let shape = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // magic + version + u16 length + dict + '\n' must be a multiple of 64.
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    dict.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
    dict.push('\n');
    w.write_all(&MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(dict.len() as u16).to_le_bytes())?;
    w.write_all(dict.as_bytes())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    write_header(w, "<f8", &[m.nrows(), m.ncols()])?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(w: &mut W, labels: &[usize]) -> std::io::Result<()> {
    write_header(w, "<i8", &[labels.len()])?;
    for &l in labels {
        w.write_all(&(l as i64).to_le_bytes())?;
    }
    Ok(())
}
