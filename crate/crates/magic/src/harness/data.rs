//! Headerless CSV input (decimal point, comma separator) and the emitted
//! table files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{MagicError, Result};

/// Reads an `n x p` matrix from a headerless CSV file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MagicError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| MagicError::Data(format!("{}: row {i}: {e}", path.display())))?;
        let row: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| {
                    MagicError::Data(format!(
                        "{}: row {i}, column {j}: cannot parse '{field}' as a number",
                        path.display()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MagicError::Data(format!(
                    "{}: row {i} has {} fields, expected {}",
                    path.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MagicError::Data(format!("{}: no rows", path.display())));
    }
    let n = rows.len();
    let p = rows[0].len();
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// Reads a single-column (or single-row) vector from a headerless CSV file.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 {
        Ok(m.column(0).into())
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(MagicError::Data(format!(
            "{}: expected a vector, found a {}x{} matrix",
            path.display(),
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Writes rows of numbers as headerless CSV with shortest round-trip float
/// formatting.
pub fn write_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a matrix as headerless CSV.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<f64>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    write_rows(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_roundtrip() {
        let dir = std::env::temp_dir().join("magic-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.5, -2.25, 0.1, 4.0, 5.5, -0.125]);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = std::env::temp_dir().join("magic-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(MagicError::Data(_))));
    }

    #[test]
    fn bad_number_reported_with_position() {
        let dir = std::env::temp_dir().join("magic-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "1,2\n3,oops\n").unwrap();
        let err = read_matrix(&path).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }
}
