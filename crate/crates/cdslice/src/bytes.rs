//! Little-endian byte cursor shared by the binary decoders. Every read is
//! bounds-checked and failures carry the byte offset where decoding stopped.

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    pub(crate) data: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.data.len() - self.pos
                ),
            ));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let offset = self.offset();
        let got = self.take(8, "magic")?;
        if got != expected {
            return Err(Error::format(
                offset,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes after the payload", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Guards length fields read from untrusted bytes: the claimed element count
/// must actually fit in the remaining input before any allocation sized by it.
pub(crate) fn check_claim(
    reader: &ByteReader,
    elems: u64,
    elem_size: usize,
    what: &str,
) -> Result<usize> {
    let remaining = (reader.data.len() - reader.pos) as u64;
    let need = elems
        .checked_mul(elem_size as u64)
        .ok_or_else(|| Error::format(reader.offset(), format!("{what} count {elems} overflows")))?;
    if need > remaining {
        return Err(Error::format(
            reader.offset(),
            format!("{what} claims {need} bytes but only {remaining} remain"),
        ));
    }
    Ok(elems as usize)
}
