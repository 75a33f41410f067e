//! CSV ingestion and output writing. Outputs are assembled in memory and
//! written once each, after sampling has finished.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use polar_expansion::diagnostics::fmt_f64;
use serde::Serialize;

use crate::error::{CliError, Result};

/// A numeric matrix read from CSV, with the detected header and row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub values: DMatrix<f64>,
    pub header: Option<Vec<String>>,
    pub labels: Option<Vec<String>>,
}

fn is_number(cell: &str) -> bool {
    cell.parse::<f64>().is_ok()
}

/// Reads a numeric CSV. The first row is a header when any cell after the
/// first is non-numeric (or it has a single non-numeric cell). With
/// `allow_labels`, a non-numeric first cell in the first data row marks the
/// first column as row labels. Errors name the offending cell with 1-based
/// row and column numbers as they appear in the file.
pub fn read_table(path: &Path, allow_labels: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    let Some(first) = rows.first() else {
        return Err(CliError::Ingestion(format!(
            "{}: file has no data",
            path.display()
        )));
    };
    let has_header =
        first.iter().skip(1).any(|c| !is_number(c)) || (first.len() == 1 && !is_number(&first[0]));
    let data_start = usize::from(has_header);
    let has_labels = allow_labels && rows.get(data_start).is_some_and(|r| !is_number(&r[0]));
    let col_start = usize::from(has_labels);

    let body = &rows[data_start..];
    if body.is_empty() {
        return Err(CliError::Ingestion(format!(
            "{}: header but no data rows",
            path.display()
        )));
    }
    let ncols = body[0].len() - col_start;
    if ncols == 0 {
        return Err(CliError::Ingestion(format!(
            "{}: no numeric columns",
            path.display()
        )));
    }
    let mut values = DMatrix::zeros(body.len(), ncols);
    for (i, row) in body.iter().enumerate() {
        for j in 0..ncols {
            let cell = &row[j + col_start];
            values[(i, j)] = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::Ingestion(format!(
                        "{}: cell (row {}, column {}) is {cell:?}, expected a finite number",
                        path.display(),
                        i + data_start + 1,
                        j + col_start + 1
                    ))
                })?;
        }
    }
    let labels = has_labels.then(|| body.iter().map(|r| r[0].clone()).collect());
    let header = has_header.then(|| first.clone());
    Ok(Table {
        values,
        header,
        labels,
    })
}

/// Creates the output directory.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Matrix as CSV under the given header. Names containing commas are quoted.
pub fn matrix_csv(header: &[String], m: &DMatrix<f64>) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    let rows = std::iter::once(header.to_vec()).chain(
        m.row_iter()
            .map(|row| row.iter().map(|&v| fmt_f64(v)).collect()),
    );
    for row in rows {
        out.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(out.into_inner().expect("writing to memory")).expect("utf-8 fields")
}

/// `prefix1, prefix2, ...`
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}
