//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "EHRGCKPT"
//! version u32      1
//! count   u32      number of entries
//! entry*  { name_len u32, name utf-8, rank u32, dims u64 × rank, values f64 × Π dims }
//! ```

use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EHRGCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = tensor;
        } else {
            self.entries.push((name, tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores every parameter of `set` as `prefix.name`.
    pub fn export(&mut self, prefix: &str, set: &impl ParamSet) {
        set.visit(&mut |name, p| self.insert(format!("{prefix}.{name}"), p.value.clone()));
    }

    /// Loads `prefix.name` entries back into `set`; shapes must match.
    pub fn restore(&self, prefix: &str, set: &mut impl ParamSet) -> Result<()> {
        let mut err = None;
        set.visit_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}.{name}");
            match self.get(&key) {
                Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
                Some(t) => {
                    err = Some(Error::shape(
                        "checkpoint restore",
                        format!("{key}: stored {:?}, expected {:?}", t.shape(), p.value.shape()),
                    ))
                }
                None => err = Some(Error::Data(format!("checkpoint has no entry {key}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                msg: "bad checkpoint magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err("entry name is not utf-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            if rank > 2 {
                return Err(r.err(format!("rank {rank} not supported")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if numel > r.remaining() / 8 {
                return Err(r.err(format!("entry {name} truncated")));
            }
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ck.entries.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(r.err("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn err(&self, msg: String) -> Error {
        Error::Parse {
            offset: self.pos,
            msg,
        }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("unexpected end of input, wanted {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
