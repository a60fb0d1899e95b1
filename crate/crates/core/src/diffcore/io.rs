//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"DITT"
//! version u32 (= 1)
//! meta    u32 byte length, then UTF-8 JSON (may be empty)
//! count   u32
//! repeat count times:
//!   name   u32 byte length, then UTF-8
//!   dtype  u8 (0 = f32, 1 = f64)
//!   ndim   u32
//!   dims   ndim × u64
//!   data   product(dims) × dtype size, row-major
//! ```
//!
//! Entries are written in insertion order, so a load followed by a save
//! reproduces the input bytes.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::diffcore::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DITT";
const VERSION: u32 = 1;

/// A tensor of either precision, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to the requested precision.
    pub fn to<S: Scalar>(&self) -> Tensor<S> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

/// Ordered collection of named tensors plus a free-form JSON metadata block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: String,
    pub tensors: IndexMap<String, AnyTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: impl Into<AnyTensor>) {
        self.tensors.insert(name.into(), t.into());
    }

    pub fn get<S: Scalar>(&self, name: &str) -> Result<Tensor<S>> {
        self.tensors
            .get(name)
            .map(AnyTensor::to)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.metadata);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.dtype() as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|x| x.write_le(&mut out)),
                AnyTensor::F64(t) => t.data().iter().for_each(|x| x.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let metadata = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(
                n.checked_mul(dtype.size())
                    .ok_or_else(|| Error::Format("size overflow".into()))?,
            )?;
            let t = match dtype {
                DType::F32 => AnyTensor::F32(Tensor::new(
                    shape,
                    payload.chunks_exact(4).map(f32::read_le).collect(),
                )?),
                DType::F64 => AnyTensor::F64(Tensor::new(
                    shape,
                    payload.chunks_exact(8).map(f64::read_le).collect(),
                )?),
            };
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor name `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(TensorFile { metadata, tensors })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
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
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}
