//! CSV helpers for point sets (`x0,x1,...` header, one point per row).

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub fn write_points_csv<W: Write>(mut w: W, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        let row: Vec<String> = p.iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a point CSV. The header must be `x0,...,x{d-1}`.
pub fn read_points_csv<R: BufRead>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or(Error::EmptyInput("points csv"))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    for (i, c) in cols.iter().enumerate() {
        if c.trim() != format!("x{i}") {
            return Err(Error::Parse(format!(
                "unexpected column {c:?} at position {i}; expected x{i}"
            )));
        }
    }
    let dim = cols.len();
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        points.push(row);
    }
    Ok(points)
}
