//! Plain-text matrices: one row per line, entries separated by whitespace.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-major text with full `f64` precision.
pub fn format_matrix(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:.16e}", a[(i, j)]).expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Parses row-major text. Blank lines and lines starting with `#` are skipped.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| Error::MatrixParse {
                    line: idx + 1,
                    reason: format!("{t:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::MatrixParse {
                    line: idx + 1,
                    reason: format!("expected {} entries, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MatrixParse {
            line: 0,
            reason: "no rows".into(),
        });
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

pub fn write_matrix(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix(a))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}
