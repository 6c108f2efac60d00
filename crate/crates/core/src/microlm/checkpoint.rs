//! Model checkpoints: a JSON header plus a binary tensor container.
//!
//! `tensors.bin` layout, all integers little-endian:
//!
//! ```text
//! magic   b"FLTN"
//! version u32
//! count   u32
//! count times:
//!   name_len u32, name (UTF-8)
//!   width    u8   (4 = f32, 8 = f64)
//!   rank     u32
//!   dims     rank x u64
//!   data     prod(dims) x width bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams, PeState};
use super::tensor::Scalar;
use crate::{Error, Result};

pub const MODEL_SCHEMA: &str = "firelab.model";
pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const TENSOR_MAGIC: &[u8; 4] = b"FLTN";
pub const TENSOR_FORMAT_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";
pub const TENSOR_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema: String,
    version: u32,
    precision: String,
    config: ModelConfig,
    pe: PeState,
}

/// A named tensor read from the container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

/// Serializes `(name, dims, data)` triples into the binary container.
pub fn encode_tensors<'a, T: Scalar>(tensors: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [T])>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("tensor container truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a container whose element width matches `T`.
pub fn decode_tensors<T: Scalar>(bytes: &[u8]) -> Result<Vec<RawTensor<T>>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor container magic".into()));
    }
    let version = r.u32()?;
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported tensor container version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let width = r.take(1)?[0];
        if width != T::WIDTH {
            return Err(Error::Format(format!(
                "tensor {name} has element width {width}, expected {} ({})",
                T::WIDTH,
                T::NAME
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = r.take(numel.checked_mul(width as usize).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data = raw.chunks_exact(width as usize).map(T::read_le).collect();
        out.push(RawTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after tensor container".into()));
    }
    Ok(out)
}

/// JSON header and tensor container as in-memory documents.
pub fn checkpoint_bytes<T: Scalar>(params: &ModelParams<T>) -> Result<(String, Vec<u8>)> {
    let doc = ModelDocument {
        schema: MODEL_SCHEMA.into(),
        version: MODEL_SCHEMA_VERSION,
        precision: T::NAME.into(),
        config: params.config.clone(),
        pe: params.pe.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)? + "\n";
    let shapes = ModelParams::<T>::tensor_shapes(&params.config);
    let mut slices = Vec::with_capacity(shapes.len());
    params.visit_tensors(|_, t| slices.push(t));
    let bin = encode_tensors(
        shapes
            .iter()
            .zip(slices)
            .map(|((name, dims), data)| (name.as_str(), dims.as_slice(), data)),
    );
    Ok((json, bin))
}

/// Writes `model.json` and `tensors.bin` into `dir`, creating it if needed.
pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, dir: &Path) -> Result<()> {
    let (json, bin) = checkpoint_bytes(params)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MODEL_FILE);
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let tpath = dir.join(TENSOR_FILE);
    fs::write(&tpath, bin).map_err(|e| Error::io(&tpath, e))?;
    Ok(())
}

/// Rebuilds parameters from in-memory documents.
pub fn params_from_bytes<T: Scalar>(json: &str, bin: &[u8]) -> Result<ModelParams<T>> {
    let doc: ModelDocument = serde_json::from_str(json)?;
    if doc.schema != MODEL_SCHEMA {
        return Err(Error::Format(format!("expected schema {MODEL_SCHEMA}, found {}", doc.schema)));
    }
    if doc.version != MODEL_SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported model schema version {}", doc.version)));
    }
    if doc.precision != T::NAME {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, requested {}",
            doc.precision,
            T::NAME
        )));
    }
    let shapes = ModelParams::<T>::tensor_shapes(&doc.config);
    let tensors = decode_tensors::<T>(bin)?;
    if tensors.len() != shapes.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {}",
            shapes.len(),
            tensors.len()
        )));
    }
    for (t, (name, dims)) in tensors.iter().zip(&shapes) {
        if &t.name != name || &t.dims != dims {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match expected {name} {dims:?}",
                t.name, t.dims
            )));
        }
    }
    let mut params = ModelParams::<T>::zeros(&doc.config, doc.pe);
    let mut it = tensors.into_iter();
    params.visit_tensors_mut(|_, dst| {
        let src = it.next().expect("count checked");
        dst.copy_from_slice(&src.data);
    });
    params.validate()?;
    Ok(params)
}

/// Loads a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<ModelParams<T>> {
    let mpath = dir.join(MODEL_FILE);
    let json = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let tpath = dir.join(TENSOR_FILE);
    let bin = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
    params_from_bytes(&json, &bin)
}
