//! Little-endian primitives shared by the binary file formats.
//!
//! Every format starts with a 4-byte magic followed by a u32 version. Reads
//! that run out of bytes surface as [`Error::Corrupt`] rather than raw I/O
//! errors so callers can tell a truncated file from a missing one.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

/// Upper bound on a single length-prefixed string; guards allocations when a
/// corrupt length field is read.
const MAX_STR_LEN: u32 = 1 << 24;

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner }
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        self.inner.write_all(magic)?;
        self.u32(FORMAT_VERSION)
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn str(&mut self, s: &str) -> Result<()> {
        let len = u32::try_from(s.len())
            .ok()
            .filter(|&l| l <= MAX_STR_LEN)
            .ok_or_else(|| Error::InvalidInput(format!("string of {} bytes too long", s.len())))?;
        self.u32(len)?;
        self.inner.write_all(s.as_bytes())?;
        Ok(())
    }

    pub(crate) fn f32s(&mut self, values: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len().min(1 << 16) * 4);
        for chunk in values.chunks(1 << 16) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.inner.write_all(&buf)?;
        }
        Ok(())
    }

    pub(crate) fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
    what: &'static str,
}

fn truncated(what: &str, e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corrupt(format!("{what}: truncated file"))
    } else {
        Error::Io(e)
    }
}

impl<R: Read> LeReader<R> {
    pub(crate) fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| truncated(self.what, e))
    }

    /// Checks magic and version.
    pub(crate) fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.fill(&mut found)?;
        if &found != magic {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected magic {:?}, found {:?}",
                self.what,
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&found)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let len = self.u32()?;
        if len > MAX_STR_LEN {
            return Err(Error::Corrupt(format!("{}: string length {len} out of range", self.what)));
        }
        let mut bytes = vec![0u8; len as usize];
        self.fill(&mut bytes)?;
        String::from_utf8(bytes).map_err(|_| Error::Corrupt(format!("{}: string is not valid UTF-8", self.what)))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(count.min(1 << 24));
        let mut buf = vec![0u8; count.min(1 << 16) * 4];
        let mut remaining = count;
        while remaining > 0 {
            let take = remaining.min(1 << 16);
            let bytes = &mut buf[..take * 4];
            self.fill(bytes)?;
            out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
            remaining -= take;
        }
        Ok(out)
    }

    /// Fails unless the stream is exhausted.
    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Corrupt(format!("{}: trailing bytes after payload", self.what))),
        }
    }
}

/// Converts a length read from a file to `usize`, rejecting absurd values.
pub(crate) fn checked_len(what: &str, v: u64, limit: u64) -> Result<usize> {
    if v > limit {
        return Err(Error::Corrupt(format!("{what}: count {v} exceeds limit {limit}")));
    }
    usize::try_from(v).map_err(|_| Error::Corrupt(format!("{what}: count {v} overflows")))
}
