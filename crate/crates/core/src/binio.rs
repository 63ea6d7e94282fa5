//! Little-endian binary encoding shared by every checkpoint format.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        self.0.write_all(magic)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    /// Values are always stored as `f64`.
    pub fn reals<T: Real>(&mut self, vs: &[T]) -> Result<()> {
        for v in vs {
            self.f64(v.to_f64_lossy())?;
        }
        Ok(())
    }
}

pub(crate) struct Reader<R: Read>(pub R);

impl<R: Read> Reader<R> {
    pub fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let mut m = [0u8; 4];
        self.0.read_exact(&mut m)?;
        if &m != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::Checkpoint(format!(
                "unsupported version {v}, expected {version}"
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn dim(&mut self, limit: usize) -> Result<usize> {
        let v = self.u32()? as usize;
        if v > limit {
            return Err(Error::Checkpoint(format!("dimension {v} exceeds limit {limit}")));
        }
        Ok(v)
    }

    pub fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.f64().map(T::of)).collect()
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Checkpoint("trailing bytes after payload".into())),
        }
    }
}
