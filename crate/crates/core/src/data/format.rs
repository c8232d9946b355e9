//! `PDCLOUD1` native point-cloud container.
//!
//! ```text
//! magic      "PDCLOUD1"             8 bytes
//! flags      u8                     bit 0 features, bit 1 normals, bit 2 labels
//! count      u64                    points
//! width      u64                    feature width, present only with bit 0
//! positions  f64 x 3 x count
//! features   f64 x width x count    bit 0
//! normals    f64 x 3 x count        bit 1
//! labels     u32 x count            bit 2
//! ```
//!
//! Everything little-endian; values are stored at full precision so a
//! round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::numerics::Tensor;

pub const CLOUD_MAGIC: &[u8; 8] = b"PDCLOUD1";

const HAS_FEATURES: u8 = 1;
const HAS_NORMALS: u8 = 2;
const HAS_LABELS: u8 = 4;

/// Guards allocation against corrupt counts.
const MAX_VALUES: u64 = 1 << 31;

fn put_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_cloud_to(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    let mut flags = 0;
    if cloud.features().is_some() {
        flags |= HAS_FEATURES;
    }
    if cloud.normals().is_some() {
        flags |= HAS_NORMALS;
    }
    if cloud.labels().is_some() {
        flags |= HAS_LABELS;
    }
    let mut buf = Vec::with_capacity(17 + cloud.len() * 56);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.push(flags);
    buf.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    if let Some(f) = cloud.features() {
        buf.extend_from_slice(&(f.last_dim() as u64).to_le_bytes());
    }
    put_f64s(&mut buf, cloud.positions().iter().flatten().copied());
    if let Some(f) = cloud.features() {
        put_f64s(&mut buf, f.data().iter().copied());
    }
    if let Some(n) = cloud.normals() {
        put_f64s(&mut buf, n.iter().flatten().copied());
    }
    if let Some(l) = cloud.labels() {
        for v in l {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|e| Error::from_read(e, what))?;
    Ok(b)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let b = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn read_f64s(r: &mut impl Read, count: u64, what: &'static str) -> Result<Vec<f64>> {
    if count > MAX_VALUES {
        return Err(Error::MalformedHeader(format!("{count} values in {what}")));
    }
    let bytes = read_exact(r, count as usize * 8, what)?;
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(vals)
}

fn to_points(v: Vec<f64>) -> Vec<Point3> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn read_cloud_from(mut r: impl Read) -> Result<PointCloud> {
    let magic = read_exact(&mut r, 8, "cloud magic")?;
    if magic != CLOUD_MAGIC {
        return Err(Error::MalformedHeader("not a PDCLOUD1 file".into()));
    }
    let flags = read_exact(&mut r, 1, "flags")?[0];
    if flags & !(HAS_FEATURES | HAS_NORMALS | HAS_LABELS) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#04x}")));
    }
    let n = read_u64(&mut r, "point count")?;
    if n == 0 || n > MAX_VALUES / 3 {
        return Err(Error::MalformedHeader(format!("point count {n}")));
    }
    let width = if flags & HAS_FEATURES != 0 {
        let w = read_u64(&mut r, "feature width")?;
        if w == 0 || w.saturating_mul(n) > MAX_VALUES {
            return Err(Error::MalformedHeader(format!("feature width {w}")));
        }
        Some(w)
    } else {
        None
    };
    let mut cloud = PointCloud::new(to_points(read_f64s(&mut r, 3 * n, "positions")?))?;
    if let Some(w) = width {
        let data = read_f64s(&mut r, w * n, "features")?;
        cloud.set_features(Some(Tensor::new(&[n as usize, w as usize], data)?))?;
    }
    if flags & HAS_NORMALS != 0 {
        cloud.set_normals(Some(to_points(read_f64s(&mut r, 3 * n, "normals")?)))?;
    }
    if flags & HAS_LABELS != 0 {
        let bytes = read_exact(&mut r, n as usize * 4, "labels")?;
        let labels = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        cloud.set_labels(Some(labels))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::MalformedHeader("trailing bytes after labels".into()));
    }
    Ok(cloud)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_cloud_to(BufWriter::new(File::create(path)?), cloud)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    read_cloud_from(BufReader::new(File::open(path)?))
}
