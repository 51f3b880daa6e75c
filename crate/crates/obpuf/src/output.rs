//! Tabular output as CSV or JSON.
//!
//! Every table starts with a provenance line naming the tool version, the
//! subcommand, the seed and the resolved configuration. In CSV it is a `#`
//! comment line ahead of the header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config: Value,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Self {
        Self {
            command: command.to_owned(),
            seed,
            config: serde_json::to_value(config).unwrap_or(Value::Null),
        }
    }

    pub fn line(&self) -> String {
        format!("obpuf {VERSION} {} seed={} config={}", self.command, self.seed, self.config)
    }
}

/// Named columns and rows of JSON scalars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| (*c).to_owned()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Shorthand for building table cells.
#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$(serde_json::json!($v)),*] };
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_csv<W: Write>(out: W, provenance: &Provenance, table: &Table) -> Result<()> {
    let mut out = out;
    writeln!(out, "# {}", provenance.line())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(cell_text))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json(provenance: &Provenance, table: &Table) -> Value {
    let rows = table
        .rows
        .iter()
        .map(|r| Value::Object(table.columns.iter().cloned().zip(r.iter().cloned()).collect::<Map<_, _>>()))
        .collect();
    serde_json::json!({ "provenance": provenance.line(), "rows": Value::Array(rows) })
}

/// Writes `<dir>/<stem>.<ext>` and returns the path.
pub fn write_table(dir: &Path, stem: &str, format: Format, provenance: &Provenance, table: &Table) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(&mut out, provenance, table)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &to_json(provenance, table))?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(path)
}

/// A CSV file written by [`write_csv`]: provenance line, header and records.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFile {
    pub provenance: String,
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl CsvFile {
    pub fn get(&self, row: usize, column: &str) -> Option<&str> {
        let i = self.header.iter().position(|h| h == column)?;
        self.records.get(row).map(|r| r[i].as_str())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let provenance = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .context("missing provenance line")?
        .to_owned();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let records = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(CsvFile { provenance, header, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Provenance, Table) {
        let prov = Provenance::new("test", 7, &serde_json::json!({"k": 64}));
        let mut t = Table::new(&["name", "value", "flag", "missing"]);
        t.push(row!["a,b", 0.1, true, Value::Null]);
        t.push(row!["c", 1e-12, false, 3]);
        (prov, t)
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (prov, t) = sample();
        let path = write_table(dir.path(), "t", Format::Csv, &prov, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# obpuf "));
        assert!(text.contains("seed=7 config={\"k\":64}"));
        let f = read_csv(&path).unwrap();
        assert_eq!(f.header, ["name", "value", "flag", "missing"]);
        assert_eq!(f.get(0, "name"), Some("a,b"));
        assert_eq!(f.get(1, "value").unwrap().parse::<f64>().unwrap(), 1e-12);
        assert_eq!(f.get(0, "missing"), Some(""));
    }

    #[test]
    fn json_rows_are_objects() {
        let (prov, t) = sample();
        let v = to_json(&prov, &t);
        assert_eq!(v["rows"][1]["value"], 1e-12);
        assert_eq!(v["rows"][0]["flag"], true);
        assert!(v["provenance"].as_str().unwrap().contains("test"));
    }
}
