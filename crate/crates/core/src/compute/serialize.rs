//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSIM" | version u32 | config_len u64 | config JSON (UTF-8)
//! tensor_count u32
//! per tensor, sorted by name:
//!   name_len u32 | name UTF-8 | rank u32 | dims u64 x rank | f32 x prod(dims)
//! ```

use std::io::{Read, Write};

use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on any single length field, to fail fast on corrupt headers.
const MAX_FIELD: u64 = 1 << 34;

pub fn write_checkpoint<W: Write>(w: &mut W, config_json: &str, store: &ParameterStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, p) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!("checkpoint truncated while reading {what}")),
            _ => Error::Stream(e),
        })
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        let v = u64::from_le_bytes(b);
        if v > MAX_FIELD {
            return Err(Error::Format(format!("implausible {what} {v}")));
        }
        Ok(v)
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let mut b = vec![0u8; len];
        self.exact(&mut b, what)?;
        String::from_utf8(b).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Reads a checkpoint, returning the JSON config blob and the tensors
/// (all trainable, gradients zeroed).
pub fn read_checkpoint<R: Read>(r: R) -> Result<(String, ParameterStore)> {
    let mut r = Reader { inner: r };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let config_len = r.u64("config length")? as usize;
    let config = r.string(config_len, "config")?;
    let count = r.u32("tensor count")?;
    let mut store = ParameterStore::new(0);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.string(name_len, "tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.exact(&mut bytes, "tensor payload")?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        store
            .insert(&name, Tensor::new(dims, data)?, true)
            .map_err(|_| Error::Format(format!("duplicate tensor `{name}`")))?;
    }
    Ok((config, store))
}
