//! Binary little-endian PLY point clouds: `x y z quality` as `float`.
//!
//! Pointmaps are written one vertex per pixel in row-major order; the grid
//! size rides along in a `comment grid <width> <height>` header line so the
//! cloud can be folded back into a pointmap.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType,
    ScalarType,
};
use ply_rs::writer::Writer;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub quality: Vec<f64>,
    /// `(width, height)` when the cloud is a flattened pointmap.
    pub grid: Option<(usize, usize)>,
}

const GRID_TAG: &str = "grid";

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    if cloud.points.len() != cloud.quality.len() {
        return Err(Error::Dimension(format!(
            "{} points but {} quality values",
            cloud.points.len(),
            cloud.quality.len()
        )));
    }
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = Encoding::BinaryLittleEndian;
    if let Some((w, h)) = cloud.grid {
        ply.header.comments.push(format!("{GRID_TAG} {w} {h}"));
    }
    let mut vertex = ElementDef::new("vertex".to_string());
    for name in ["x", "y", "z", "quality"] {
        vertex
            .properties
            .add(PropertyDef::new(name.to_string(), PropertyType::Scalar(ScalarType::Float)));
    }
    ply.header.elements.add(vertex);
    let rows = cloud
        .points
        .iter()
        .zip(&cloud.quality)
        .map(|(p, q)| {
            let mut e = DefaultElement::new();
            e.insert("x".to_string(), Property::Float(p[0] as f32));
            e.insert("y".to_string(), Property::Float(p[1] as f32));
            e.insert("z".to_string(), Property::Float(p[2] as f32));
            e.insert("quality".to_string(), Property::Float(*q as f32));
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), rows);

    let tmp = path.with_extension("ply.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        Writer::new().write_ply(&mut out, &mut ply)?;
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn scalar(p: Option<&Property>) -> Option<f64> {
    match p? {
        Property::Float(v) => Some(*v as f64),
        Property::Double(v) => Some(*v),
        Property::Char(v) => Some(*v as f64),
        Property::UChar(v) => Some(*v as f64),
        Property::Short(v) => Some(*v as f64),
        Property::UShort(v) => Some(*v as f64),
        Property::Int(v) => Some(*v as f64),
        Property::UInt(v) => Some(*v as f64),
        _ => None,
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);
    let ply = Parser::<DefaultElement>::new().read_ply(&mut reader)?;
    let grid = ply.header.comments.iter().find_map(|c| {
        let mut it = c.split_whitespace();
        if it.next()? != GRID_TAG {
            return None;
        }
        Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
    });
    let vertices = ply
        .payload
        .get("vertex")
        .ok_or_else(|| Error::Format(format!("{}: no vertex element", path.display())))?;
    let mut points = Vec::with_capacity(vertices.len());
    let mut quality = Vec::with_capacity(vertices.len());
    for v in vertices {
        let coord = |k: &str| {
            scalar(v.get(k)).ok_or_else(|| Error::Format(format!("{}: vertex lacks `{k}`", path.display())))
        };
        points.push([coord("x")?, coord("y")?, coord("z")?]);
        quality.push(scalar(v.get("quality")).unwrap_or(0.0));
    }
    if let Some((w, h)) = grid {
        if w * h != points.len() {
            return Err(Error::Format(format!(
                "{}: grid {w}x{h} but {} vertices",
                path.display(),
                points.len()
            )));
        }
    }
    Ok(PointCloud { points, quality, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_with_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ply");
        let cloud = PointCloud {
            points: vec![[0.0, 1.0, 2.0], [-1.5, 0.25, 3.0]],
            quality: vec![2.0, 7.5],
            grid: Some((2, 1)),
        };
        write_ply(&path, &cloud).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = String::from_utf8_lossy(&bytes[..bytes.len().min(200)]).into_owned();
        assert!(header.starts_with("ply\nformat binary_little_endian 1.0"));
        assert!(header.contains("property float quality"));
        assert_eq!(read_ply(&path).unwrap(), cloud);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud { points: vec![[0.0; 3]], quality: vec![], grid: None };
        assert!(write_ply(&dir.path().join("x.ply"), &cloud).is_err());
    }
}
