//! Named parameter collections and the binary checkpoint container.
//!
//! Checkpoint layout: magic `IVF1`, then a little-endian `u32` array count;
//! per array a `u16` name length, the UTF-8 name, a `u8` rank, `u32` dims,
//! and the row-major payload as little-endian `f32`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::tape::{BoundParams, Tape};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"IVF1";

/// Ordered name -> tensor map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E: Element> {
    entries: IndexMap<String, Tensor<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Bind every parameter onto `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<E>) -> BoundParams<'t, E> {
        let mut bound = BoundParams::new();
        for (name, tensor) in &self.entries {
            bound.insert(name.clone(), tape.leaf(tensor.clone(), true));
        }
        bound
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Serialize to the checkpoint byte format (payloads stored as `f32`).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many arrays".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name '{name}' too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.ndim() as u8);
            for &d in tensor.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint("dimension exceeds u32".into()))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// SHA-256 of the serialized checkpoint bytes.
    pub fn digest(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_bytes()?).into())
    }
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn write_checkpoint<E: Element>(store: &ParamStore<E>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, store.to_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let bytes = fs::read(path.as_ref())?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let fail = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| fail("truncated checkpoint"))?;
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(fail("bad magic: not an IVF1 checkpoint"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| fail("array name is not UTF-8"))?
            .to_string();
        let ndim = take(&mut pos, 1)?[0] as usize;
        if ndim == 0 || ndim > 4 {
            return Err(fail(&format!("array '{name}' has invalid rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    if pos != bytes.len() {
        return Err(fail("trailing bytes after last array"));
    }
    Ok(store)
}
