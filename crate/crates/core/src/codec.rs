//! Versioned binary envelope shared by every on-wire and on-disk artifact.
//!
//! ```text
//! "LENC"           4 bytes magic
//! version          u16 LE
//! kind             u8   (see [`Kind`])
//! section_count    u32 LE
//! section*         tag u8 | length u64 LE | body
//! ```
//!
//! Section bodies are built from little-endian primitives; real vectors are a
//! u64 element count followed by IEEE-754 f64 values.

use crate::error::{LencError, Result};

pub const MAGIC: &[u8; 4] = b"LENC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Learner = 1,
    Vae = 2,
    TransferPayload = 3,
    NodeCheckpoint = 4,
    Stream = 5,
    Dataset = 6,
}

impl Kind {
    fn from_u8(v: u8) -> Option<Kind> {
        Some(match v {
            1 => Kind::Learner,
            2 => Kind::Vae,
            3 => Kind::TransferPayload,
            4 => Kind::NodeCheckpoint,
            5 => Kind::Stream,
            6 => Kind::Dataset,
            _ => return None,
        })
    }
}

fn snap_err(field: &str, reason: impl Into<String>) -> LencError {
    LencError::Snapshot {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
        self
    }

    pub fn usizes(&mut self, v: &[usize]) -> &mut Self {
        self.u64(v.len() as u64);
        for x in v {
            self.u64(*x as u64);
        }
        self
    }

    pub fn opt_f64(&mut self, v: Option<f64>) -> &mut Self {
        match v {
            Some(x) => self.u8(1).f64(x),
            None => self.u8(0),
        }
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(snap_err(field, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn usize(&mut self, field: &str) -> Result<usize> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| snap_err(field, "value exceeds usize"))
    }

    pub fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn bool(&mut self, field: &str) -> Result<bool> {
        match self.u8(field)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(snap_err(field, format!("invalid bool byte {v}"))),
        }
    }

    fn count(&mut self, field: &str, elem_size: usize) -> Result<usize> {
        let n = self.usize(field)?;
        let remaining = self.buf.len() - self.pos;
        if n.checked_mul(elem_size).is_none_or(|b| b > remaining) {
            return Err(snap_err(field, "length prefix exceeds remaining bytes"));
        }
        Ok(n)
    }

    pub fn f64s(&mut self, field: &str) -> Result<Vec<f64>> {
        let n = self.count(field, 8)?;
        (0..n).map(|_| self.f64(field)).collect()
    }

    pub fn usizes(&mut self, field: &str) -> Result<Vec<usize>> {
        let n = self.count(field, 8)?;
        (0..n).map(|_| self.usize(field)).collect()
    }

    pub fn opt_f64(&mut self, field: &str) -> Result<Option<f64>> {
        if self.bool(field)? {
            Ok(Some(self.f64(field)?))
        } else {
            Ok(None)
        }
    }

    pub fn bytes(&mut self, field: &str) -> Result<&'a [u8]> {
        let n = self.count(field, 1)?;
        self.take(n, field)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn expect_done(&self, field: &str) -> Result<()> {
        if self.is_done() {
            Ok(())
        } else {
            Err(snap_err(field, "trailing bytes"))
        }
    }
}

/// A decoded envelope: its kind and tagged sections in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub kind: Kind,
    pub sections: Vec<(u8, Vec<u8>)>,
}

impl Envelope {
    pub fn new(kind: Kind) -> Self {
        Self {
            kind,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, tag: u8, body: Vec<u8>) -> &mut Self {
        self.sections.push((tag, body));
        self
    }

    pub fn section(&self, tag: u8, field: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| snap_err(field, "missing section"))
    }

    pub fn sections_with(&self, tag: u8) -> impl Iterator<Item = &[u8]> {
        self.sections
            .iter()
            .filter(move |(t, _)| *t == tag)
            .map(|(_, b)| b.as_slice())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.buf.extend_from_slice(MAGIC);
        e.u16(FORMAT_VERSION).u8(self.kind as u8);
        e.u32(self.sections.len() as u32);
        for (tag, body) in &self.sections {
            e.u8(*tag).bytes(body);
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        if d.take(4, "magic")? != MAGIC {
            return Err(snap_err("magic", "not a LENC envelope"));
        }
        let version = d.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(snap_err("version", format!("unsupported version {version}")));
        }
        let kind_byte = d.u8("kind")?;
        let kind =
            Kind::from_u8(kind_byte).ok_or_else(|| snap_err("kind", format!("unknown kind {kind_byte}")))?;
        let n = d.u32("section_count")?;
        let mut sections = Vec::new();
        for _ in 0..n {
            let tag = d.u8("section.tag")?;
            let body = d.bytes("section.body")?.to_vec();
            sections.push((tag, body));
        }
        d.expect_done("envelope")?;
        Ok(Self { kind, sections })
    }

    pub fn decode_kind(bytes: &[u8], expected: Kind) -> Result<Self> {
        let env = Self::decode(bytes)?;
        if env.kind != expected {
            return Err(snap_err(
                "kind",
                format!("expected {:?}, found {:?}", expected, env.kind),
            ));
        }
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_header_layout() {
        let mut env = Envelope::new(Kind::Stream);
        env.push(7, vec![1, 2, 3]);
        let bytes = env.encode();
        assert_eq!(&bytes[..4], b"LENC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(bytes[6], Kind::Stream as u8);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 1);
        assert_eq!(bytes[11], 7);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(&bytes[20..], &[1, 2, 3]);
        assert_eq!(Envelope::decode(&bytes).unwrap(), env);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut env = Envelope::new(Kind::Learner);
        env.push(1, vec![0; 16]);
        let mut bytes = env.encode();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            Envelope::decode(truncated),
            Err(LencError::Snapshot { .. })
        ));
        bytes[0] = b'X';
        let err = Envelope::decode(&bytes).unwrap_err();
        assert!(matches!(err, LencError::Snapshot { ref field, .. } if field == "magic"));
    }

    #[test]
    fn huge_length_prefix_is_rejected() {
        let mut e = Encoder::new();
        e.u64(u64::MAX);
        let bytes = e.finish();
        assert!(Decoder::new(&bytes).f64s("x").is_err());
    }
}
