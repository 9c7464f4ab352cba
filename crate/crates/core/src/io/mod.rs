//! Trace and label file formats.

pub mod csv;
pub mod npy;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Result, SaError};

/// On-disk encoding of a trace matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    /// numpy `.npy`, `<f8`, C order, 2-D.
    BinaryMatrix,
    Csv,
}

impl TraceFormat {
    /// `.npy` files are binary matrices; everything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("npy") => TraceFormat::BinaryMatrix,
            _ => TraceFormat::Csv,
        }
    }
}

impl FromStr for TraceFormat {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "npy" | "binary" => Ok(TraceFormat::BinaryMatrix),
            "csv" => Ok(TraceFormat::Csv),
            _ => Err(SaError::invalid(format!("unknown trace format {s:?}"))),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| SaError::io(path, e))
}

pub fn read_matrix_file(
    path: &Path,
    format: TraceFormat,
    skip_header: bool,
) -> Result<Array2<f64>> {
    let mut r = open(path)?;
    match format {
        TraceFormat::BinaryMatrix => npy::read_matrix(&mut r),
        TraceFormat::Csv => csv::read_matrix(r, skip_header),
    }
}

/// Labels are read as `.npy` when the extension says so, otherwise as CSV.
pub fn read_labels_file(path: &Path, skip_header: bool) -> Result<Vec<usize>> {
    let mut r = open(path)?;
    match TraceFormat::from_path(path) {
        TraceFormat::BinaryMatrix => npy::read_labels(&mut r),
        TraceFormat::Csv => csv::read_labels(r, skip_header),
    }
}
