//! ASCII PLY for external viewers.
//!
//! Export writes `x y z`, then `nx ny nz` and a `uchar label` when present.
//! The reader accepts any ASCII file with a `vertex` element carrying
//! `x y z`; other properties and elements are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub fn write_ply_to(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    if let Some(labels) = cloud.labels() {
        if let Some(&l) = labels.iter().find(|&&l| l > u8::MAX as u32) {
            return Err(Error::InvalidLabel { label: l as usize, classes: 256 });
        }
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment pdnet export\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.normals().is_some() {
        out.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if cloud.labels().is_some() {
        out.push_str("property uchar label\n");
    }
    out.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        out.push_str(&format!("{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32));
        if let Some(n) = cloud.normals() {
            out.push_str(&format!(" {} {} {}", n[i][0] as f32, n[i][1] as f32, n[i][2] as f32));
        }
        if let Some(l) = cloud.labels() {
            out.push_str(&format!(" {}", l[i]));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_ply_to(BufWriter::new(File::create(path)?), cloud)
}

struct Element {
    name: String,
    count: usize,
    /// Scalar property names; `None` marks a list property.
    properties: Vec<Option<String>>,
}

fn header_err(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

/// Parses an ASCII PLY. Normals are renormalized to unit length; a `label`
/// or `class` vertex property becomes the per-point labels.
pub fn read_ply_from(r: impl BufRead) -> Result<PointCloud> {
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(Error::from) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(header_err("missing 'ply' signature"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    loop {
        let line = next()?.ok_or_else(|| Error::Truncated("PLY header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => format_seen = true,
            ["format", other, ..] => return Err(header_err(format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| header_err(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, _] => {
                elements.last_mut().ok_or_else(|| header_err("property before element"))?.properties.push(None)
            }
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| header_err("property before element"))?
                .properties
                .push(Some(name.to_string())),
            ["end_header"] => break,
            _ => return Err(header_err(format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_seen {
        return Err(header_err("missing format line"));
    }
    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                next()?.ok_or_else(|| Error::Truncated(format!("{} element", el.name)))?;
            }
            continue;
        }
        if el.properties.iter().any(Option::is_none) {
            return Err(header_err("list properties on vertices are not supported"));
        }
        let col = |name: &str| el.properties.iter().position(|p| p.as_deref() == Some(name));
        let xyz = [col("x"), col("y"), col("z")];
        let [Some(x), Some(y), Some(z)] = xyz else {
            return Err(header_err("vertex element lacks x, y or z"));
        };
        let normal_cols = match [col("nx"), col("ny"), col("nz")] {
            [Some(a), Some(b), Some(c)] => Some([a, b, c]),
            _ => None,
        };
        let label_col = col("label").or_else(|| col("class"));
        let mut positions = Vec::with_capacity(el.count);
        let mut normals: Vec<Point3> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..el.count {
            let line = next()?.ok_or_else(|| Error::Truncated(format!("vertex {i} of {}", el.count)))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != el.properties.len() {
                return Err(header_err(format!("vertex {i} has {} values, expected {}", vals.len(), el.properties.len())));
            }
            let num = |c: usize| -> Result<f64> {
                let v: f64 = vals[c].parse().map_err(|_| header_err(format!("bad number '{}'", vals[c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite("PLY vertex"))
                }
            };
            positions.push([num(x)?, num(y)?, num(z)?]);
            if let Some([a, b, c]) = normal_cols {
                let n = [num(a)?, num(b)?, num(c)?];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if len == 0.0 {
                    return Err(Error::NonUnitNormal { row: i, norm: 0.0 });
                }
                normals.push(n.map(|v| v / len));
            }
            if let Some(c) = label_col {
                labels.push(vals[c].parse::<u32>().map_err(|_| header_err(format!("bad label '{}'", vals[c])))?);
            }
        }
        let mut pc = PointCloud::new(positions)?;
        if normal_cols.is_some() {
            pc.set_normals(Some(normals))?;
        }
        if label_col.is_some() {
            pc.set_labels(Some(labels))?;
        }
        cloud = Some(pc);
    }
    cloud.ok_or_else(|| header_err("no vertex element"))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    read_ply_from(BufReader::new(File::open(path)?))
}
