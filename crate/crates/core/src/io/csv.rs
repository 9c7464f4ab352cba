//! Comma-separated trace matrices (one trace per line, `.` decimal separator)
//! and single-column label files.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Result, SaError};

fn reader<R: Read>(r: R, skip_header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
}

/// Reads a dense matrix. Values are parsed as-is; non-finite tokens such as
/// `nan` survive parsing and are rejected when a `TraceSet` is built.
pub fn read_matrix<R: Read>(r: R, skip_header: bool) -> Result<Array2<f64>> {
    let mut rdr = reader(r, skip_header);
    let mut flat = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SaError::Parse(format!("csv row {row}: {e}")))?;
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(SaError::DimensionMismatch {
                row,
                expected,
                found: rec.len(),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                SaError::Parse(format!(
                    "csv value {field:?} at ({row}, {col}) is not a number"
                ))
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    let d = width.unwrap_or(0);
    Array2::from_shape_vec((rows, d), flat).map_err(|e| SaError::Parse(e.to_string()))
}

/// Reads one non-negative integer label per line.
pub fn read_labels<R: Read>(r: R, skip_header: bool) -> Result<Vec<usize>> {
    let mut rdr = reader(r, skip_header);
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SaError::Parse(format!("csv row {row}: {e}")))?;
        if rec.len() != 1 {
            return Err(SaError::Parse(format!(
                "label row {row} has {} columns, expected 1",
                rec.len()
            )));
        }
        let field = &rec[0];
        let l = field.parse::<usize>().map_err(|_| {
            SaError::Parse(format!(
                "label {field:?} at row {row} is not a non-negative integer"
            ))
        })?;
        labels.push(l);
    }
    Ok(labels)
}

/// Writes a matrix using the shortest round-trip representation of each value.
pub fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(w: &mut W, labels: &[usize]) -> std::io::Result<()> {
    for l in labels {
        writeln!(w, "{l}")?;
    }
    Ok(())
}
