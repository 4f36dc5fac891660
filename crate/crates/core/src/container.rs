//! Tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"LOBT"
//! version    u32 (= 1)
//! n_attrs    u32, then per attribute: key (u32 len + utf8), value (u32 len + utf8)
//! n_tensors  u32, then per tensor:
//!   name     u32 len + utf8
//!   dtype    u8  (0 f32, 1 f64, 2 u32, 3 i64, 4 u8)
//!   ndim     u8, then ndim × u64 dims
//!   payload  product(dims) elements, little-endian
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LOBT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U32(_) => 2,
            TensorData::I64(_) => 3,
            TensorData::U8(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub attrs: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_attr(&mut self, key: impl Into<String>, value: impl ToString) {
        self.attrs.insert(key.into(), value.to_string());
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Container(format!(
                "tensor {name}: dims {dims:?} hold {expected} elements, payload has {}",
                data.len()
            )));
        }
        self.tensors.retain(|t| t.name != name);
        self.tensors.push(NamedTensor { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.get(name) {
            Some(NamedTensor { dims, data: TensorData::F32(v), .. }) => Ok((dims, v)),
            Some(_) => Err(Error::Container(format!("tensor {name} is not f32"))),
            None => Err(Error::Container(format!("missing tensor {name}"))),
        }
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(NamedTensor { dims, data: TensorData::F64(v), .. }) => Ok((dims, v)),
            Some(_) => Err(Error::Container(format!("tensor {name} is not f64"))),
            None => Err(Error::Container(format!("missing tensor {name}"))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[usize], &[u8])> {
        match self.get(name) {
            Some(NamedTensor { dims, data: TensorData::U8(v), .. }) => Ok((dims, v)),
            Some(_) => Err(Error::Container(format!("tensor {name} is not u8"))),
            None => Err(Error::Container(format!("missing tensor {name}"))),
        }
    }

    pub fn i64(&self, name: &str) -> Result<(&[usize], &[i64])> {
        match self.get(name) {
            Some(NamedTensor { dims, data: TensorData::I64(v), .. }) => Ok((dims, v)),
            Some(_) => Err(Error::Container(format!("tensor {name} is not i64"))),
            None => Err(Error::Container(format!("missing tensor {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.attrs.len() as u32).to_le_bytes());
        for (k, v) in &self.attrs {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.data.dtype());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let mut c = Container::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            c.attrs.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = match dtype {
                0 => TensorData::F32(r.chunks(n, 4)?.map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                1 => TensorData::F64(r.chunks(n, 8)?.map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                2 => TensorData::U32(r.chunks(n, 4)?.map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect()),
                3 => TensorData::I64(r.chunks(n, 8)?.map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect()),
                4 => TensorData::U8(r.take(n)?.to_vec()),
                other => return Err(Error::Container(format!("unknown dtype {other}"))),
            };
            c.tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Container("trailing bytes".into()));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Container("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn chunks(&mut self, n: usize, width: usize) -> Result<std::slice::ChunksExact<'a, u8>> {
        let len = n.checked_mul(width).ok_or_else(|| Error::Container("tensor too large".into()))?;
        Ok(self.take(len)?.chunks_exact(width))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Container("invalid utf8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new();
        c.set_attr("representation", "volume");
        c.insert("x", vec![2, 3], TensorData::F32(vec![0.0, 1.0, 2.0, 3.0, 4.5, -1.0])).unwrap();
        c.insert("y", vec![2], TensorData::U8(vec![0, 2])).unwrap();
        c.insert("r", vec![2], TensorData::F64(vec![1e-4, -2e-4])).unwrap();
        c.insert("a", vec![0], TensorData::I64(vec![])).unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.attr("representation"), Some("volume"));
        assert_eq!(back.f32("x").unwrap().0, &[2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Container::new();
        assert!(c.insert("x", vec![3], TensorData::F32(vec![1.0])).is_err());
        c.insert("x", vec![1], TensorData::F32(vec![1.0])).unwrap();
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Container::from_bytes(b"NOPE").is_err());
    }
}
