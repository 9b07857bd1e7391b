//! `GPRV` volume files.
//!
//! Layout (little-endian): magic `GPRV`, `u16` version 1, `u8` dtype
//! (0 = f32, 1 = f64), `u8` ndim, `ndim` × `u32` dims, then the row-major
//! payload.

use std::path::Path;

use voxinv_core::Tensor;

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};

pub const VOLUME_MAGIC: [u8; 4] = *b"GPRV";
pub const VOLUME_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Volume {
    pub fn shape(&self) -> &[usize] {
        match self {
            Volume::F32(t) => t.shape(),
            Volume::F64(t) => t.shape(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            Volume::F32(t) => t.cast(),
            Volume::F64(t) => t.clone(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Volume::F32(t) => t.clone(),
            Volume::F64(t) => t.cast(),
        }
    }
}

/// Sequential little-endian reader that reports truncation.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::DimOverflow)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated { needed: end, available: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn dims(&mut self) -> Result<(Vec<usize>, usize)> {
        let ndim = self.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let d = self.u32()? as usize;
            count = count.checked_mul(d).ok_or(Error::DimOverflow)?;
            dims.push(d);
        }
        Ok((dims, count))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::DimOverflow)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::DimOverflow)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    out.push(u8::try_from(dims.len()).map_err(|_| Error::DimOverflow)?);
    for &d in dims {
        out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::DimOverflow)?.to_le_bytes());
    }
    Ok(())
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    match v {
        Volume::F32(t) => {
            out.push(0);
            put_dims(&mut out, t.shape())?;
            t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        Volume::F64(t) => {
            out.push(1);
            put_dims(&mut out, t.shape())?;
            t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let mut c = Cursor::new(bytes);
    c.magic(VOLUME_MAGIC)?;
    let version = c.u16()?;
    if version != VOLUME_VERSION {
        return Err(Error::BadVersion(version));
    }
    let dtype = c.u8()?;
    if dtype > 1 {
        return Err(Error::BadDtype(dtype));
    }
    let (dims, n) = c.dims()?;
    let v = if dtype == 0 {
        Volume::F32(Tensor::from_vec(&dims, c.f32s(n)?)?)
    } else {
        Volume::F64(Tensor::from_vec(&dims, c.f64s(n)?)?)
    };
    c.finish()?;
    Ok(v)
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_atomic(path, &encode_volume(v)?)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let a = Volume::F32(Tensor::from_fn(&[2, 3, 4], |i| i as f32 * 0.1 - 1.0));
        let b = Volume::F64(Tensor::from_fn(&[5], |i| (i as f64).sqrt()));
        for v in [a, b] {
            assert_eq!(decode_volume(&encode_volume(&v).unwrap()).unwrap(), v);
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_volume(&Volume::F32(Tensor::zeros(&[2, 2]))).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_volume(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_volume(&bad), Err(Error::BadVersion(9))));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(decode_volume(&bytes), Err(Error::Truncated { .. })));
    }
}
