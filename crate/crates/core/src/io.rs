//! CSV and JSON file formats.
//!
//! Datasets are plain CSV: one observation per row, `.` as decimal separator,
//! no header unless requested. Ground-truth latents live next to the data file
//! with suffixes `.s.csv` (supports) and `.z.csv` (continuous latents).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{GscError, Result};
use crate::model::Dataset;

/// `data.csv` -> `data.<tag>.csv`.
pub fn sibling_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

/// Reads a rectangular numeric CSV. Errors carry 1-based row and column numbers.
pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| GscError::io(path, e))?;
    parse_matrix_csv(&text, has_header, &path.display().to_string())
}

pub fn parse_matrix_csv(text: &str, has_header: bool, label: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |row: usize, col: usize, msg: String| GscError::Parse {
        path: label.to_string(),
        row,
        col,
        msg,
    };
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1 + usize::from(has_header);
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match ncols {
            None => ncols = Some(record.len()),
            Some(n) if n != record.len() => {
                return Err(parse_err(
                    row,
                    record.len().min(n) + 1,
                    format!("expected {n} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, j + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| parse_err(1, 1, "file contains no data".into()))?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

pub fn format_matrix_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| GscError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| GscError::io(path, e))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_text(path, &format_matrix_csv(m, header))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| GscError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads `Y` plus any `.s.csv` / `.z.csv` siblings that exist.
pub fn load_dataset(path: &Path, has_header: bool) -> Result<Dataset> {
    let mut data = Dataset::new(read_matrix_csv(path, has_header)?)?;
    let s_path = sibling_path(path, "s");
    if s_path.exists() {
        data.s_true = Some(read_matrix_csv(&s_path, has_header)?);
    }
    let z_path = sibling_path(path, "z");
    if z_path.exists() {
        data.z_true = Some(read_matrix_csv(&z_path, has_header)?);
    }
    data.check_ground_truth()?;
    Ok(data)
}

/// Writes `Y` and its latent siblings. Returns the paths written.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<Vec<PathBuf>> {
    let mut written = vec![path.to_path_buf()];
    write_matrix_csv(path, &data.y, None)?;
    if let Some(s) = &data.s_true {
        let p = sibling_path(path, "s");
        write_matrix_csv(&p, s, None)?;
        written.push(p);
    }
    if let Some(z) = &data.z_true {
        let p = sibling_path(path, "z");
        write_matrix_csv(&p, z, None)?;
        written.push(p);
    }
    Ok(written)
}

/// Log-likelihood trace as `iteration,log_lik` rows.
pub fn format_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,log_lik\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_matrix() {
        let m = parse_matrix_csv("1,2\n3,4\n5,6\n", false, "t").unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(2, 1)], 6.0);
    }

    #[test]
    fn ragged_row_reports_location() {
        match parse_matrix_csv("1,2\n3", false, "t") {
            Err(GscError::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cell_and_empty_file() {
        match parse_matrix_csv("x,y\n1,2\n1,abc\n", true, "t") {
            Err(GscError::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_matrix_csv("", false, "t"), Err(GscError::Parse { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-300, 1.0 / 3.0, 12345.678]);
        let back = parse_matrix_csv(&format_matrix_csv(&m, None), false, "t").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling_path(Path::new("out/data.csv"), "s"), PathBuf::from("out/data.s.csv"));
    }

    #[test]
    fn trace_csv() {
        assert_eq!(format_trace_csv(&[-2.0, -1.5]), "iteration,log_lik\n0,-2\n1,-1.5\n");
    }
}
