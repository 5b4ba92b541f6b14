use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::surfel::{Surfel, SurfelMap};
use crate::error::{Error, Result};

const PROPERTIES: [&str; 11] = [
    "float x",
    "float y",
    "float z",
    "float nx",
    "float ny",
    "float nz",
    "uchar red",
    "uchar green",
    "uchar blue",
    "float radius",
    "float confidence",
];

fn to_byte(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an ASCII PLY of the stable surfels, or of every surfel with `all`.
pub fn write_ply<W: Write>(out: &mut W, map: &SurfelMap, all: bool) -> std::io::Result<()> {
    let surfels: Vec<&Surfel> = map
        .surfels
        .iter()
        .filter(|s| all || map.is_stable(s))
        .collect();
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", surfels.len())?;
    for p in PROPERTIES {
        writeln!(out, "property {p}")?;
    }
    writeln!(out, "end_header")?;
    for s in surfels {
        let (p, n) = (s.position, s.normal);
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {}",
            p.x as f32,
            p.y as f32,
            p.z as f32,
            n.x as f32,
            n.y as f32,
            n.z as f32,
            to_byte(s.color[0]),
            to_byte(s.color[1]),
            to_byte(s.color[2]),
            s.radius as f32,
            s.confidence as f32
        )?;
    }
    Ok(())
}

pub fn export_ply(map: &SurfelMap, path: &Path, all: bool) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_ply(&mut out, map, all)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses a PLY written by [`write_ply`]. Colours come back in `[0, 1]`.
pub fn parse_ply(text: &str) -> std::result::Result<Vec<Surfel>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err("missing `ply` magic".into());
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|e| e.to_string())?);
        } else if let Some(p) = line.strip_prefix("property ") {
            props.push(p.to_string());
        }
    }
    let count = count.ok_or("no vertex element")?;
    if props != PROPERTIES {
        return Err(format!("unexpected properties {props:?}"));
    }
    let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if body.len() != count {
        return Err(format!(
            "header lists {count} vertices, body has {}",
            body.len()
        ));
    }
    body.iter()
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f32>().map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("vertex {i}: {e}"))?;
            if v.len() != PROPERTIES.len() {
                return Err(format!("vertex {i}: {} fields", v.len()));
            }
            let mut s = Surfel::new(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
                v[9],
                [v[6], v[7], v[8]].map(|c| (c / 255.0) as f32),
                v[10],
                0,
            );
            s.normal = Vector3::new(v[3], v[4], v[5]);
            Ok(s)
        })
        .collect()
}

pub fn read_ply(path: &Path) -> Result<Vec<Surfel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|r| Error::format(path, r))
}
