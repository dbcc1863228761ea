//! Single-file checkpoint archive.
//!
//! ```text
//! b"PLAYREP\0"                 magic
//! u32  format version          little endian throughout
//! u8   dtype                   0 = f32, 1 = f64
//! u64  metadata length, then that many bytes of UTF-8 JSON
//!      {"meta": CheckpointMeta}
//! u32  array count
//! per array (sorted by name):
//!      u32 name length, name bytes, u32 rank, u64 per dimension,
//!      row-major values
//! [32] SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{DType, Scalar};

use super::bundle::{CheckpointMeta, NamedArray, WeightBundle};

pub const MAGIC: &[u8; 8] = b"PLAYREP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
}

pub fn encode<T: Scalar>(bundle: &WeightBundle<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    let header = serde_json::to_vec(&Header {
        meta: bundle.meta.clone(),
    })?;
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(bundle.arrays.len() as u32).to_le_bytes());
    for (name, a) in &bundle.arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &a.data {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
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
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos)))?;
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

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<WeightBundle<T>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 1 + 32 {
        return Err(Error::Checkpoint(format!(
            "checksum error: file is truncated ({} bytes)",
            bytes.len()
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum error: file is truncated or corrupt".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is not readable by this build (reads version {FORMAT_VERSION})"
        )));
    }
    let dtype_code = r.take(1)?[0];
    let dtype =
        DType::from_code(dtype_code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {dtype_code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {dtype:?} arrays, {:?} requested",
            T::DTYPE
        )));
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;
    if header.meta.schema_version != super::bundle::CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "metadata schema version {} is not supported (expected {})",
            header.meta.schema_version,
            super::bundle::CHECKPOINT_SCHEMA_VERSION
        )));
    }
    let count = r.u32()?;
    let width = std::mem::size_of::<T>();
    let mut bundle = WeightBundle::new(header.meta);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        bundle.insert(name, NamedArray::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last array",
            body.len() - r.pos
        )));
    }
    Ok(bundle)
}

pub fn save<T: Scalar>(bundle: &WeightBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, encode(bundle)?).map_err(Error::io(path))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<WeightBundle<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
