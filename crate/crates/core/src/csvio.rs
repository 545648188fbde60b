//! Numeric CSV ingestion and emission.
//!
//! Matrices are comma-delimited with an optional header row (detected by a
//! non-numeric first record). Values are written with Rust's shortest
//! round-trip formatting so re-parsing reproduces the exact binary values.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn parse_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = open_reader(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse {
            row: row_idx + 1,
            col: 0,
            detail: e.to_string(),
        })?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        let mut bad: Option<(usize, String)> = None;
        for (col_idx, field) in record.iter().enumerate() {
            match field.trim().parse::<f64>() {
                Ok(v) => row.push(v),
                Err(e) => {
                    bad = Some((col_idx, e.to_string()));
                    break;
                }
            }
        }
        if let Some((col_idx, detail)) = bad {
            // a non-numeric first row is a header; anything later is an error
            if row_idx == 0 {
                continue;
            }
            return Err(Error::CsvParse {
                row: row_idx + 1,
                col: col_idx + 1,
                detail: format!("{detail} (field {:?})", &record[col_idx]),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::CsvParse {
                    row: row_idx + 1,
                    col: row.len(),
                    detail: format!("expected {w} fields, found {}", row.len()),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            row: 1,
            col: 1,
            detail: "no numeric rows".into(),
        });
    }
    Ok(rows)
}

/// Reads a numeric matrix (rows = observations).
pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    let rows = parse_rows(path.as_ref())?;
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// Reads a numeric vector: a single column, or a single row.
pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<DVector<f64>> {
    let rows = parse_rows(path.as_ref())?;
    if rows[0].len() == 1 {
        Ok(DVector::from_fn(rows.len(), |i, _| rows[i][0]))
    } else if rows.len() == 1 {
        Ok(DVector::from_column_slice(&rows[0]))
    } else {
        Err(Error::CsvParse {
            row: 2,
            col: rows[0].len(),
            detail: "expected a single-column or single-row vector".into(),
        })
    }
}

/// Writes a matrix with round-trip decimal formatting and an optional
/// header row.
pub fn write_matrix<W: Write>(
    out: &mut W,
    header: Option<&[&str]>,
    m: &DMatrix<f64>,
) -> std::io::Result<()> {
    if let Some(names) = header {
        writeln!(out, "{}", names.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
