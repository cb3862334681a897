//! Flat result tables with a pinned column order, emitted as RFC-4180 CSV
//! or JSON lines, plus the sidecar metadata file.

use crate::config::OutFormat;
use crate::{CliError, Result};
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One typed cell. Floats print through Rust's shortest round-trip
/// formatting, so re-parsing an emitted file reproduces the value exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    UInt(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::UInt(v) => write!(f, "{v}"),
            Field::Float(v) => write!(f, "{v}"),
            Field::Text(v) => write!(f, "{v}"),
            Field::Empty => Ok(()),
        }
    }
}

impl Field {
    fn to_json(&self) -> serde_json::Value {
        match self {
            Field::UInt(v) => serde_json::json!(v),
            Field::Float(v) => serde_json::json!(v),
            Field::Text(v) => serde_json::json!(v),
            Field::Empty => serde_json::Value::Null,
        }
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::UInt(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::UInt(v as u64)
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl<T: Into<Field>> From<Option<T>> for Field {
    fn from(v: Option<T>) -> Self {
        match v {
            Some(x) => x.into(),
            None => Field::Empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[&'static str] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Field>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width does not match header"
        );
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|f| f.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|_| CliError::config("CSV output was not UTF-8"))
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let obj: serde_json::Map<String, serde_json::Value> = self
                .columns
                .iter()
                .zip(row)
                .map(|(c, f)| (c.to_string(), f.to_json()))
                .collect();
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    /// Reads back an emitted CSV as raw cells; used for round-trip checks.
    pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record?.iter().map(|s| s.to_string()).collect());
        }
        Ok((header, rows))
    }
}

/// Sidecar metadata written next to every result file.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub git_hash: String,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    pub out_format: String,
    pub n_rows: usize,
    pub workers: usize,
}

pub fn git_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Writes the table to `path` in the requested format and the metadata to
/// `path` + ".meta.json". Returns the sidecar path.
pub fn emit_results(
    table: &Table,
    path: &Path,
    format: OutFormat,
    meta: &RunMeta,
) -> Result<PathBuf> {
    let payload = match format {
        OutFormat::Csv => table.to_csv_string()?,
        OutFormat::JsonLines => table.to_json_lines(),
    };
    let mut file =
        std::fs::File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    file.write_all(payload.as_bytes())
        .map_err(|e| CliError::io(path.display().to_string(), e))?;

    let sidecar = sidecar_path(path);
    let meta_json = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::config(format!("metadata serialization failed: {e}")))?;
    std::fs::write(&sidecar, meta_json)
        .map_err(|e| CliError::io(sidecar.display().to_string(), e))?;
    Ok(sidecar)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Fails fast when the output location cannot be created.
pub fn check_writable(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(CliError::config(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
    }
    let file =
        std::fs::File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    drop(file);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> Table {
        let mut t = Table::new(vec!["d", "dist", "value", "flag"]);
        t.push(vec![
            4u64.into(),
            "gaussian".into(),
            0.125f64.into(),
            Field::Empty,
        ]);
        t.push(vec![
            8u64.into(),
            "student-t:8".into(),
            (1.0 / 3.0).into(),
            1u64.into(),
        ]);
        t
    }

    #[test]
    fn csv_round_trip_preserves_cells() {
        let t = sample_table();
        let text = t.to_csv_string().unwrap();
        let (header, rows) = Table::parse_csv(&text).unwrap();
        assert_eq!(header, t.columns());
        assert_eq!(rows.len(), t.len());
        for (parsed, original) in rows.iter().zip(t.rows()) {
            let rendered: Vec<String> = original.iter().map(|f| f.to_string()).collect();
            assert_eq!(parsed, &rendered);
        }
        // float cells survive a parse exactly
        assert_eq!(rows[1][2].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(vec!["a", "b"]);
        let text = t.to_csv_string().unwrap();
        assert_eq!(text, "a,b\n");
    }

    #[test]
    fn json_lines_shape() {
        let t = sample_table();
        let payload = t.to_json_lines();
        let lines: Vec<&str> = payload.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["d"], 4);
        assert_eq!(v["dist"], "gaussian");
        assert!(v["flag"].is_null());
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn row_width_is_enforced() {
        let mut t = Table::new(vec!["a", "b"]);
        t.push(vec![1u64.into()]);
    }
}
