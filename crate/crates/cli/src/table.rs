//! Comma-separated input: header row, UTF-8, unquoted numeric cells.

use std::path::Path;

use crate::{usage, CliError};

/// Header plus raw string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Tokens read as a missing value.
const MISSING: [&str; 4] = ["", "na", "nan", "."];

pub fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    MISSING.iter().any(|m| c.eq_ignore_ascii_case(m))
}

/// A cell with a matching pair of surrounding double quotes loses them.
fn unquote(cell: &str) -> &str {
    let c = cell.trim();
    if c.len() >= 2 && c.starts_with('"') && c.ends_with('"') {
        &c[1..c.len() - 1]
    } else {
        c
    }
}

impl Table {
    pub fn parse(text: &str) -> Result<Table, CliError> {
        // quoting disabled: a quoted field holding a comma yields a ragged row
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .quoting(false)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| usage(format!("cannot read header: {e}")))?
            .iter()
            .map(|h| unquote(h).to_string())
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(usage("input has no header"));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| usage(format!("data row {}: {e}", i + 1)))?;
            if rec.iter().any(|c| c.contains('"') && unquote(c).contains('"')) {
                return Err(usage(format!("data row {}: unbalanced quote", i + 1)));
            }
            rows.push(rec.iter().map(|c| unquote(c).to_string()).collect());
        }
        Ok(Table { headers, rows })
    }

    pub fn read(path: &Path) -> Result<Table, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        Table::parse(&text)
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("no column named '{name}'")))
    }

    /// Numeric values of `name`; `None` marks a missing cell.
    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>, CliError> {
        let j = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = &r[j];
                if is_missing(cell) {
                    return Ok(None);
                }
                cell.trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| usage(format!("data row {}, column '{name}': '{cell}' is not a number", i + 1)))
            })
            .collect()
    }
}
