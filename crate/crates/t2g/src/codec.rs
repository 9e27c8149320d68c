//! Little-endian primitive encoding shared by the binary files.

use t2g_core::Mat;

use crate::error::{Error, Result};

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("length fits in 32 bits");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len());
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    /// Shape then row-major values.
    pub fn mat(&mut self, m: &Mat) {
        self.u32(m.rows());
        self.u32(m.cols());
        self.f64s(m.data());
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::invalid(format!(
                "{}: truncated at byte {} (needed {n} more)",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::invalid(format!("{}: invalid flag byte {b}", self.what))),
        }
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.remaining() / 8 < n {
            return Err(Error::invalid(format!("{}: truncated float block", self.what)));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::invalid(format!("{}: string is not UTF-8", self.what)))
    }

    pub fn mat(&mut self) -> Result<Mat> {
        let r = self.u32()?;
        let c = self.u32()?;
        let n = r
            .checked_mul(c)
            .ok_or_else(|| Error::invalid(format!("{}: matrix too large", self.what)))?;
        Ok(Mat::from_vec(r, c, self.f64s(n)?)?)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::invalid(format!(
                "{}: {} trailing bytes",
                self.what,
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut w = Writer::default();
        w.u8(7);
        w.u32(70_000);
        w.u64(u64::MAX);
        w.f64(-0.5);
        w.str("héllo");
        w.mat(&Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let mut r = Reader::new(&w.buf, "test");
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 70_000);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.f64().unwrap(), -0.5);
        assert_eq!(r.str().unwrap(), "héllo");
        assert_eq!(r.mat().unwrap().get(1, 0), 3.0);
        r.finish().unwrap();
        assert!(Reader::new(&w.buf[..3], "test").u32().is_err());
    }
}
