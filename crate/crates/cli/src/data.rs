use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::CliError;

/// A CSV table with a header row and every cell parsed as `f64`.
pub struct Table {
    pub header: Vec<String>,
    pub raw: Vec<csv::StringRecord>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Input(format!("{}: missing header row", path.display())));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(CliError::Input(format!("{}: duplicate column `{dup}`", path.display())));
    }

    let mut raw = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CliError::Input(format!("{}: line {line}: {e}", path.display())))?;
        let mut row = Vec::with_capacity(record.len());
        for (cell, name) in record.iter().zip(&header) {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("{}: line {line}, column `{name}`: `{cell}` is not a number", path.display()))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{}: line {line}, column `{name}`: non-finite value",
                    path.display()
                )));
            }
            row.push(v);
        }
        rows.push(row);
        raw.push(record);
    }
    Ok(Table { header, raw, rows })
}

/// Formats with 17 significant digits, which round-trips every `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string())),
    }
}

pub fn check_readable(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("input file {} does not exist", path.display())))
    }
}

/// The parent directory of an output path must already exist.
pub fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Input(format!("output directory {} does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(CliError::Input(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}
