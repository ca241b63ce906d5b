//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian: the 8-byte magic `D2DCEPRM`, a `u32`
//! format version, a `u32` tensor count, then per tensor a `u32` name length,
//! the UTF-8 name, a `u32` rank, one `u64` per dimension and the raw `f64`
//! values. Round trips are bit-exact.

use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::RealArray;

pub const MAGIC: &[u8; 8] = b"D2DCEPRM";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in value.data() {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(Error::Checkpoint("unsupported version"));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(
                usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow"))?,
            );
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Checkpoint("dimension overflow"))?;
        if n.checked_mul(8).is_none_or(|b| b > r.bytes.len()) {
            return Err(Error::Checkpoint("truncated"));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(r.u64()?));
        }
        let value =
            RealArray::new(shape, data).map_err(|_| Error::Checkpoint("non-finite value"))?;
        store.push(name, value);
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes"));
    }
    Ok(store)
}

/// Joins several stores into one, prefixing each name with `prefix/`.
pub fn bundle(parts: &[(&str, &ParamStore)]) -> ParamStore {
    let mut out = ParamStore::new();
    for (prefix, store) in parts {
        for (name, value) in store.iter() {
            out.push(alloc::format!("{prefix}/{name}"), value.clone());
        }
    }
    out
}

/// Extracts the tensors stored under `prefix/`, in order.
pub fn unbundle(store: &ParamStore, prefix: &str) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, value) in store.iter() {
        if let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_prefix('/')) {
            out.push(rest, value.clone());
        }
    }
    out
}
