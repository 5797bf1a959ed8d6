//! Named-tensor archives for model parameters and training checkpoints.
//!
//! Layout: magic `LGMRCKPT` (8 bytes), u32 little-endian version (= 1),
//! u64 little-endian metadata length + UTF-8 JSON metadata, u32 tensor count,
//! then per tensor: u32 name length + name bytes, u8 dtype (1 = f32,
//! 2 = f64), u32 ndim, ndim x u64 dims, row-major little-endian payload.
//!
//! Tensor names mirror parameter names (`encoder.layer0.local_attn.q_proj.weight`,
//! ...) and are stable across versions. Full training checkpoints store f64
//! parameters plus `adam.m.*` / `adam.v.*` optimizer slots; parameter-only
//! exports store f32, which any loader upcasts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const MAGIC: &[u8; 8] = b"LGMRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta_bytes = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_bytes);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expect: usize = t.dims.iter().product();
            if expect != t.data.len() {
                return Err(Error::invalid(format!(
                    "tensor {} dims {:?} do not match {} values",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            match &t.data {
                TensorData::F32(_) => out.push(1),
                TensorData::F64(_) => out.push(2),
            }
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Archive> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::schema("bad magic bytes, not an LGMRCKPT archive"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::schema(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(cur.take(meta_len)?)?;
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::schema("tensor name is not UTF-8"))?;
            let dtype = cur.take(1)?[0];
            let ndim = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let mut dims = Vec::with_capacity(ndim);
            let mut n: usize = 1;
            for _ in 0..ndim {
                let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::schema("tensor size overflow"))?;
                dims.push(d);
            }
            let data = match dtype {
                1 => {
                    let raw = cur.take(n * 4)?;
                    TensorData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                2 => {
                    let raw = cur.take(n * 8)?;
                    TensorData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => {
                    return Err(Error::schema(format!("unknown tensor dtype tag {other}")))
                }
            };
            tensors.push(NamedTensor { name, dims, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::schema("trailing bytes after checkpoint payload"));
        }
        Ok(Archive { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let bytes = fs::read(path)
            .map_err(|e| Error::schema(format!("cannot read {}: {e}", path.display())))?;
        Archive::decode(&bytes)
    }

    pub fn meta_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::schema("truncated checkpoint archive"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parameters as f64 tensors (exact: used by training checkpoints).
pub fn params_to_tensors_f64(ps: &ParamSet) -> Vec<NamedTensor> {
    ps.iter()
        .map(|(name, t)| NamedTensor {
            name: name.to_string(),
            dims: vec![t.rows, t.cols],
            data: TensorData::F64(t.data.clone()),
        })
        .collect()
}

/// Parameters as f32 tensors (portable export).
pub fn params_to_tensors_f32(ps: &ParamSet) -> Vec<NamedTensor> {
    ps.iter()
        .map(|(name, t)| NamedTensor {
            name: name.to_string(),
            dims: vec![t.rows, t.cols],
            data: TensorData::F32(t.data.iter().map(|&v| v as f32).collect()),
        })
        .collect()
}

/// Loads named tensors into an existing parameter set; every parameter must
/// be present with matching dims. Extra archive tensors are ignored.
pub fn load_params_from(ps: &mut ParamSet, archive: &Archive) -> Result<()> {
    for idx in 0..ps.len() {
        let id = crate::nn::PId(idx);
        let name = ps.name(id).to_string();
        let found = archive
            .find(&name)
            .ok_or_else(|| Error::schema(format!("checkpoint missing tensor {name}")))?;
        let t = ps.tensor_mut(id);
        if found.dims != vec![t.rows, t.cols] {
            return Err(Error::schema(format!(
                "tensor {name} dims {:?} do not match model {}x{}",
                found.dims, t.rows, t.cols
            )));
        }
        t.data = found.data.to_f64();
    }
    Ok(())
}
