//! Numeric CSV ingestion with line and column diagnostics.

use std::fs::File;
use std::path::Path;

use crate::CliError;

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_cell(text: &str, line: u64, column: usize) -> Result<f64, CliError> {
    let v: f64 = text
        .parse()
        .map_err(|_| CliError::Input(format!("line {line}, column {column}: cannot parse '{text}' as a number")))?;
    if !v.is_finite() {
        return Err(CliError::Input(format!("line {line}, column {column}: non-finite value '{text}'")));
    }
    Ok(v)
}

/// Reads a rectangular matrix; `header` skips the first record.
pub fn read_matrix(path: &Path, header: bool) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = open(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if header && idx == 0 {
            continue;
        }
        let line = rec.position().map_or(idx as u64 + 1, |p| p.line());
        if let Some(first) = rows.first() {
            if rec.len() != first.len() {
                return Err(CliError::Input(format!(
                    "line {line}: expected {} fields, found {}",
                    first.len(),
                    rec.len()
                )));
            }
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, t)| parse_cell(t, line, c + 1))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Input("empty matrix".into()));
    }
    Ok(rows)
}

/// Reads one column (1-based) of a CSV file.
pub fn read_column(path: &Path, column: usize, header: bool) -> Result<Vec<f64>, CliError> {
    if column == 0 {
        return Err(CliError::Input("column numbers start at 1".into()));
    }
    let mut reader = open(path)?;
    let mut out = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if header && idx == 0 {
            continue;
        }
        let line = rec.position().map_or(idx as u64 + 1, |p| p.line());
        let cell = rec
            .get(column - 1)
            .ok_or_else(|| CliError::Input(format!("line {line}: no column {column}")))?;
        out.push(parse_cell(cell, line, column)?);
    }
    if out.is_empty() {
        return Err(CliError::Input("no values".into()));
    }
    Ok(out)
}
