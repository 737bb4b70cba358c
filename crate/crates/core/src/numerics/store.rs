//! Named parameter storage and the binary tensor container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes  "SLKT"
//! version   u32
//! meta_len  u32, followed by meta_len bytes of UTF-8 metadata
//! count     u32
//! count times:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, then ndim × u64 extents
//!   product(extents) × f64 values, row-major
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write/read cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"SLKT";
pub const CONTAINER_VERSION: u32 = 1;

const ADAM_M_SUFFIX: &str = "@adam.m";
const ADAM_V_SUFFIX: &str = "@adam.v";

/// An ordered set of named tensors plus a free-form metadata string.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CONTAINER_MAGIC {
            return Err(Error::Format("not a tensor container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Format("container metadata is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Format(format!("tensor {name}: extent overflow")))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data)
                .map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after container".into()));
        }
        Ok(Container { meta, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
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
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Frozen parameters still collect gradients but are skipped by the optimizer.
    pub frozen: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Param {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if name.contains('@') {
            return Err(Error::Argument(format!(
                "parameter name {name:?} contains '@'"
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::Argument(format!("duplicate parameter {name:?}")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Argument(format!("no parameter named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Argument(format!("no parameter named {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Values and Adam moments as a container (gradients are not persisted).
    pub fn to_container(&self, meta: String) -> Container {
        let mut tensors = Vec::with_capacity(self.params.len() * 3);
        for (name, p) in &self.params {
            tensors.push((name.clone(), p.value.clone()));
            tensors.push((format!("{name}{ADAM_M_SUFFIX}"), p.m.clone()));
            tensors.push((format!("{name}{ADAM_V_SUFFIX}"), p.v.clone()));
        }
        Container { meta, tensors }
    }

    /// Inverse of [`ParamStore::to_container`]. Moment buffers are optional.
    pub fn from_container(c: &Container) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in &c.tensors {
            if !name.contains('@') {
                store.insert(name, t.clone())?;
            }
        }
        for (name, t) in &c.tensors {
            let (base, slot) = if let Some(b) = name.strip_suffix(ADAM_M_SUFFIX) {
                (b, 0)
            } else if let Some(b) = name.strip_suffix(ADAM_V_SUFFIX) {
                (b, 1)
            } else {
                continue;
            };
            let p = store
                .params
                .get_mut(base)
                .ok_or_else(|| Error::Format(format!("moment buffer {name} without parameter")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?} does not match parameter {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            if slot == 0 {
                p.m = t.clone();
            } else {
                p.v = t.clone();
            }
        }
        Ok(store)
    }
}
