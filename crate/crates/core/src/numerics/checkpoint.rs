//! `PDNETCKPT` parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    "PDNETCKPT"            9 bytes
//! version  u32                    currently 1
//! count    u32                    number of tensors
//! repeated count times:
//!   name_len u32, name            UTF-8
//!   rank     u32
//!   dims     u64 x rank
//!   payload  f32 x prod(dims)     IEEE-754
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"PDNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes named tensors. Values are narrowed to `f32`.
pub fn write_tensors<'a, W, I>(mut w: W, tensors: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let tensors: Vec<_> = tensors.into_iter().collect();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        if !t.is_finite() {
            return Err(Error::NonFinite("checkpoint tensor"));
        }
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::from_read(e, what))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::from_read(e, what))?;
    Ok(u64::from_le_bytes(b))
}

/// Upper bound on a single tensor read, guarding against corrupt dims.
const MAX_ELEMENTS: u64 = 1 << 31;

pub fn read_tensors(mut r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|e| Error::from_read(e, "checkpoint magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::MalformedHeader("not a PDNETCKPT file".into()));
    }
    let version = read_u32(&mut r, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r, "name length")?;
        if name_len > 1 << 16 {
            return Err(Error::MalformedHeader(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|e| Error::from_read(e, "tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::MalformedHeader("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")?;
        if rank > 16 {
            return Err(Error::MalformedHeader(format!("rank {rank} for {name}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r, "dims")?;
            total = total.saturating_mul(d);
            dims.push(d as usize);
        }
        if total == 0 || total > MAX_ELEMENTS {
            return Err(Error::MalformedHeader(format!("tensor {name} has {total} elements")));
        }
        let mut payload = vec![0u8; total as usize * 4];
        r.read_exact(&mut payload).map_err(|e| Error::from_read(e, &format!("payload of {name}")))?;
        let data: Vec<f64> = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint payload"));
        }
        out.push((name, Tensor::new(&dims, data)?));
    }
    Ok(out)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), store.iter())
}

/// Loads a checkpoint into an existing store; names and shapes must match exactly.
pub fn load_params(store: &mut ParamStore, path: &Path) -> Result<()> {
    let tensors = read_tensors(BufReader::new(File::open(path)?))?;
    if tensors.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store.id(&name).ok_or_else(|| Error::Config(format!("unknown parameter {name} in checkpoint")))?;
        store.set(id, t)?;
    }
    Ok(())
}
