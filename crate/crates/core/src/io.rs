//! Plain-text interchange formats.
//!
//! * Point files: one point per line, at least three numeric fields
//!   separated by whitespace or commas. Extra fields are ignored.
//! * Normal files: `x y z nx ny nz` per line.
//! * Label files: non-negative integers, whitespace separated (normally one
//!   per line), aligned with the point file.
//!
//! Lines starting with `#` and blank lines are skipped everywhere. Values are
//! written with Rust's shortest round-trip float formatting, so reading a
//! written file reproduces the values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::types::{NormalField, Point3, PointCloud};

/// A cloud with one integer plane label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<u32>,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: cloud.len(),
                got: labels.len(),
            });
        }
        Ok(LabeledCloud { cloud, labels })
    }

    /// Distinct label values in ascending order.
    pub fn label_set(&self) -> Vec<u32> {
        let mut set = self.labels.clone();
        set.sort_unstable();
        set.dedup();
        set
    }
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
}

fn parse_row(path: &Path, line_no: usize, line: &str, want: usize) -> Result<Vec<f64>> {
    let values: Vec<&str> = fields(line).take(want).collect();
    if values.len() < want {
        return Err(Error::Parse {
            path: path.into(),
            line: line_no,
            message: format!("expected at least {want} numeric fields, found {}", values.len()),
        });
    }
    values
        .iter()
        .map(|v| {
            v.parse::<f64>().map_err(|_| Error::Parse {
                path: path.into(),
                line: line_no,
                message: format!("'{v}' is not a number"),
            })
        })
        .collect()
}

/// Reads a point file.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut points = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let v = parse_row(path, line_no, &line, 3)?;
        let p = Point3::new(v[0], v[1], v[2]);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                message: "non-finite coordinate".into(),
            });
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud(path.into()));
    }
    PointCloud::new(points)
}

/// Reads a label file.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let mut labels = Vec::new();
    for (line_no, line) in data_lines(path)? {
        for tok in fields(&line) {
            let label = tok.parse::<u32>().map_err(|_| Error::Parse {
                path: path.into(),
                line: line_no,
                message: format!("'{tok}' is not a non-negative integer label"),
            })?;
            labels.push(label);
        }
    }
    Ok(labels)
}

/// Reads a point file and its aligned label file.
pub fn read_labeled(points_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let cloud = read_xyz(points_path)?;
    let labels = read_labels(labels_path)?;
    LabeledCloud::new(cloud, labels)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

/// Writes `x y z nx ny nz` lines.
pub fn write_normals(path: impl AsRef<Path>, cloud: &PointCloud, normals: &NormalField) -> Result<()> {
    let path = path.as_ref();
    if cloud.len() != normals.len() {
        return Err(Error::LengthMismatch {
            what: "normals",
            expected: cloud.len(),
            got: normals.len(),
        });
    }
    let mut w = create(path)?;
    for (p, n) in cloud.points().iter().zip(normals.normals()) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)
            .map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

/// Reads a file written by [`write_normals`]. Normals are renormalized.
pub fn read_normals(path: impl AsRef<Path>) -> Result<(PointCloud, NormalField)> {
    let path = path.as_ref();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let v = parse_row(path, line_no, &line, 6)?;
        points.push(Point3::new(v[0], v[1], v[2]));
        normals.push(Vector3::new(v[3], v[4], v[5]));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud(path.into()));
    }
    Ok((PointCloud::new(points)?, NormalField::normalized(normals)?))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for l in labels {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}
