//! Minimal numeric CSV tables.
//!
//! Sweep results and schedules are flat tables of named numeric columns.
//! The writer is deliberately strict so files are reproducible byte for
//! byte: one header line, one row per line, LF endings, every number
//! printed with 17 significant digits so a reread recovers the exact f64.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{PspcError, Result};

/// A table of named numeric columns, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl CsvTable {
    /// Creates an empty table with the given column names.
    pub fn new<S: Into<String>>(headers: Vec<S>) -> Result<Self> {
        let headers: Vec<String> = headers.into_iter().map(Into::into).collect();
        if headers.is_empty() {
            return Err(PspcError::ConfigError("table needs at least one column".into()));
        }
        for h in &headers {
            if h.contains(',') || h.contains('\n') {
                return Err(PspcError::FormatError(format!(
                    "column name {h:?} contains a delimiter"
                )));
            }
        }
        Ok(CsvTable {
            headers,
            rows: Vec::new(),
        })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Appends one row; its width must match the header.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(PspcError::ShapeMismatch(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.headers.len()
            )));
        }
        self.rows.push(row.to_vec());
        Ok(())
    }

    /// Returns one column by name.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PspcError::MissingData(format!("no column named {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Renders the table as CSV text (LF line endings).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.headers.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // 17 significant digits: enough to round trip any f64.
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses CSV text produced by [`CsvTable::to_csv_string`].
    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| PspcError::FormatError("empty csv input".into()))?;
        let headers: Vec<String> = header_line.split(',').map(str::to_owned).collect();
        let mut table = CsvTable::new(headers)?;
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(table.headers.len());
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    PspcError::FormatError(format!(
                        "line {}: {field:?} is not a number",
                        lineno + 2
                    ))
                })?;
                row.push(v);
            }
            table.push_row(&row)?;
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_string(&text)
    }
}
