//! ASCII xyz point files: one point per line, whitespace-separated
//! coordinates, `#` comment lines.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};

#[derive(Debug, Error)]
pub enum XyzError {
    #[error("line {line}: expected at least 3 numeric fields, got {got}")]
    TooFewFields { line: usize, got: usize },
    #[error("line {line}: field {field} ({text:?}) is not a number")]
    NotANumber {
        line: usize,
        field: usize,
        text: String,
    },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse xyz text: one point per non-empty line, first three whitespace
/// separated fields are x, y, z; extra fields are ignored. Blank lines and
/// lines starting with `#` are skipped. Line numbers in errors are 1-based.
pub fn read_xyz_ascii<R: BufRead>(source: R) -> Result<PointCloud, XyzError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut coords = [0.0f64; 3];
        for (f, slot) in coords.iter_mut().enumerate() {
            let text = fields.next().ok_or(XyzError::TooFewFields {
                line: line_no,
                got: f,
            })?;
            let value: f64 = text.parse().map_err(|_| XyzError::NotANumber {
                line: line_no,
                field: f + 1,
                text: text.to_string(),
            })?;
            if !value.is_finite() {
                return Err(XyzError::NonFinite { line: line_no });
            }
            *slot = value;
        }
        xs.push(coords[0]);
        ys.push(coords[1]);
        zs.push(coords[2]);
    }
    Ok(PointCloud::from_coords(xs, ys, zs)?)
}

/// Counts of (total lines, data lines) in xyz text, for `info`.
pub fn count_xyz_lines<R: BufRead>(source: R) -> Result<(usize, usize), XyzError> {
    let mut lines = 0usize;
    let mut points = 0usize;
    for line in source.lines() {
        let line = line?;
        lines += 1;
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            points += 1;
        }
    }
    Ok((lines, points))
}

/// Write "x y z" lines with shortest round-trip decimal formatting.
pub fn write_xyz<W: Write>(cloud: &PointCloud, mut sink: W) -> Result<(), XyzError> {
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.point(i);
        writeln!(sink, "{x} {y} {z}")?;
    }
    Ok(())
}
