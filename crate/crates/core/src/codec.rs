//! Little-endian binary framing shared by the checkpoint, mask database and
//! editor state files.
//!
//! Every file is `magic[8] | version u32 | body_len u64 | body | sha256[32]`,
//! with the digest taken over everything before it.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn u64s(&mut self, vs: &[u64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.u64(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Reader { buf, kind }
    }

    fn eof(&self) -> Error {
        Error::Format(self.kind, "unexpected end of data".into())
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.buf.read_u8().map_err(|_| self.eof())
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.buf.read_u64::<LittleEndian>().map_err(|_| self.eof())
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::Format(self.kind, format!("value {v} overflows usize")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.buf.read_f64::<LittleEndian>().map_err(|_| self.eof())
    }

    fn len_prefix(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len()) {
            return Err(self.eof());
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.u64()).collect()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len_prefix(1)?;
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head.to_vec())
    }

    pub fn str(&mut self) -> Result<String> {
        let kind = self.kind;
        String::from_utf8(self.bytes()?).map_err(|e| Error::Format(kind, e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(
                self.kind,
                format!("{} trailing bytes", self.buf.len()),
            ))
        }
    }
}

pub(crate) fn seal(magic: &[u8; 8], version: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 52);
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(version).expect("vec write");
    out.write_u64::<LittleEndian>(body.len() as u64)
        .expect("vec write");
    out.extend_from_slice(body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Verifies framing and checksum, returning the body.
pub(crate) fn open<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    version: u32,
    kind: &'static str,
) -> Result<&'a [u8]> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::Magic(kind));
    }
    if bytes.len() < 20 + 32 {
        return Err(Error::Checksum);
    }
    let (framed, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(framed).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut hdr = &framed[8..20];
    let found = hdr.read_u32::<LittleEndian>().expect("length checked");
    if found != version {
        return Err(Error::Version {
            kind,
            found,
            expected: version,
        });
    }
    let len = hdr.read_u64::<LittleEndian>().expect("length checked");
    let body = &framed[20..];
    if body.len() as u64 != len {
        return Err(Error::Format(kind, "body length mismatch".into()));
    }
    Ok(body)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sealed_roundtrip_and_corruption() {
        let mut w = Writer::new();
        w.u64(7);
        w.f64s(&[1.5, -0.0, f64::MAX]);
        w.str("hello");
        let sealed = seal(b"TESTFILE", 3, &w.into_inner());
        let body = open(&sealed, b"TESTFILE", 3, "test").unwrap();
        let mut r = Reader::new(body, "test");
        assert_eq!(r.u64().unwrap(), 7);
        let fs = r.f64s().unwrap();
        assert_eq!(fs[2], f64::MAX);
        assert!(fs[1].is_sign_negative());
        assert_eq!(r.str().unwrap(), "hello");
        r.finish().unwrap();

        assert!(matches!(
            open(&sealed, b"OTHERFIL", 3, "test"),
            Err(Error::Magic(_))
        ));
        let mut bad = sealed.clone();
        bad[25] ^= 1;
        assert!(matches!(
            open(&bad, b"TESTFILE", 3, "test"),
            Err(Error::Checksum)
        ));
        let v4 = seal(b"TESTFILE", 4, b"");
        assert!(matches!(
            open(&v4, b"TESTFILE", 3, "test"),
            Err(Error::Version { found: 4, .. })
        ));
    }
}
