//! Portable binary weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32            format version (currently 1)
//! u64            tensor count
//! per tensor:
//!   u32          name length in bytes
//!   [u8; len]    name, UTF-8
//!   u8           dtype tag (0 = f32, 1 = f64)
//!   u32          rank
//!   u64 × rank   dimensions
//!   [payload]    row-major element bytes, little-endian
//! ```
//!
//! Save → load reproduces every tensor bitwise; saving the loaded container
//! again produces identical bytes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Serialize every entry of a store, in insertion order.
pub fn save_weights<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(store);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn to_bytes<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, tensor) in store.entries() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.to_le_bytes(&mut out);
        }
    }
    out
}

/// Load a container whose payloads were written with scalar type `T`.
/// A container holding a different dtype is a [`Error::DtypeMismatch`].
pub fn load_weights<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ContainerVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = cur.u64("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = cur.u32(&format!("entry {i} name length"))? as usize;
        let name_bytes = cur.take(name_len, &format!("entry {i} name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::ContainerTruncated {
                detail: format!("entry {i} name is not valid UTF-8"),
            })?
            .to_string();
        let tag = cur.take(1, &format!("entry '{name}' dtype tag"))?[0];
        let dtype = Dtype::from_tag(tag).ok_or_else(|| Error::ContainerTruncated {
            detail: format!("entry '{name}' has unknown dtype tag {tag}"),
        })?;
        if dtype != T::DTYPE {
            return Err(Error::DtypeMismatch {
                name,
                found: dtype.name(),
                expected: T::DTYPE.name(),
            });
        }
        let rank = cur.u32(&format!("entry '{name}' rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64(&format!("entry '{name}' shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel * dtype.size_bytes(), &format!("entry '{name}' payload"))?;
        let data: Vec<T> = payload
            .chunks_exact(dtype.size_bytes())
            .map(T::from_le_slice)
            .collect();
        store.add(name, Tensor::new(shape, data))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::ContainerTruncated {
            detail: format!(
                "{} trailing bytes after the last entry",
                bytes.len() - cur.pos
            ),
        });
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ContainerTruncated {
                detail: format!(
                    "file ends inside {what}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// SHA-256 over the serialized container bytes. Used to assert the frozen
/// teacher never changes during translation-model training.
pub fn weights_fingerprint<T: Scalar>(store: &ParamStore<T>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(to_bytes(store));
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
