//! Flat binary container for named arrays.
//!
//! Layout: magic `VITG`, format version (u32 LE), entry count (u32 LE),
//! then one record per entry: length-prefixed UTF-8 name, dtype tag (u8),
//! rank (u32), dims (u64 each), raw little-endian payload. Round-trips
//! are bit-exact; anything malformed is rejected with a load error.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"VITG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Payload {
    fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
            Payload::U64(_) => Dtype::U64,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

/// An ordered, name-indexed set of arrays.
#[derive(Default)]
pub struct Container {
    names: Vec<String>,
    entries: HashMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    fn insert(&mut self, name: &str, entry: Entry) -> Result<()> {
        if self.entries.insert(name.to_string(), entry).is_some() {
            return Err(Error::Contract(format!("duplicate checkpoint entry {name}")));
        }
        self.names.push(name.to_string());
        Ok(())
    }

    pub fn put_tensor<E: Element>(&mut self, name: &str, t: &Tensor<E>) -> Result<()> {
        let payload = match E::DTYPE {
            Dtype::F32 => Payload::F32(t.data().iter().map(|v| v.to_f64() as f32).collect()),
            Dtype::F64 => Payload::F64(t.data().iter().map(|v| v.to_f64()).collect()),
            Dtype::U64 => unreachable!("tensors are floating point"),
        };
        self.insert(
            name,
            Entry {
                shape: t.shape().to_vec(),
                payload,
            },
        )
    }

    pub fn put_u64s(&mut self, name: &str, values: &[u64]) -> Result<()> {
        self.insert(
            name,
            Entry {
                shape: vec![values.len()],
                payload: Payload::U64(values.to_vec()),
            },
        )
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Load(format!("missing checkpoint entry {name}")))
    }

    /// Fetch a tensor entry; the stored dtype must match `E` exactly so
    /// round-trips stay bit-exact.
    pub fn tensor<E: Element>(&self, name: &str) -> Result<Tensor<E>> {
        let entry = self.entry(name)?;
        let data: Vec<E> = match (&entry.payload, E::DTYPE) {
            (Payload::F32(v), Dtype::F32) => v.iter().map(|&x| E::from_f64(x as f64)).collect(),
            (Payload::F64(v), Dtype::F64) => v.iter().map(|&x| E::from_f64(x)).collect(),
            (p, want) => {
                return Err(Error::Load(format!(
                    "entry {name} has dtype {:?}, expected {:?}",
                    p.dtype(),
                    want
                )))
            }
        };
        Tensor::new(data, &entry.shape)
            .map_err(|_| Error::Load(format!("entry {name} has inconsistent shape")))
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.entry(name)?.payload {
            Payload::U64(v) => Ok(v),
            p => Err(Error::Load(format!(
                "entry {name} has dtype {:?}, expected U64",
                p.dtype()
            ))),
        }
    }

    pub fn u64_scalar(&self, name: &str) -> Result<u64> {
        let v = self.u64s(name)?;
        if v.len() != 1 {
            return Err(Error::Load(format!("entry {name} is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.names.len() as u32).to_le_bytes());
        for name in &self.names {
            let entry = &self.entries[name];
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(entry.payload.dtype().tag());
            out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
            for &d in &entry.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &entry.payload {
                Payload::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::U64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Load("bad magic bytes, not a checkpoint container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Load(format!(
                "unsupported container version {version}, expected {VERSION}"
            )));
        }
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Load("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = Dtype::from_tag(r.u8()?)?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = match dtype {
                Dtype::F32 => {
                    let raw = r.take(n * 4)?;
                    Payload::F32(raw.chunks_exact(4).map(f32::read_le).collect())
                }
                Dtype::F64 => {
                    let raw = r.take(n * 8)?;
                    Payload::F64(raw.chunks_exact(8).map(f64::read_le).collect())
                }
                Dtype::U64 => {
                    let raw = r.take(n * 8)?;
                    Payload::U64(
                        raw.chunks_exact(8)
                            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
            };
            debug_assert_eq!(payload.len(), n);
            c.insert(&name, Entry { shape, payload })?;
        }
        Ok(c)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Load(format!(
                "truncated container: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
