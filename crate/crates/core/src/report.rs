//! Tabular CSV output shared by every report type.

use std::io::Write;

use crate::error::{Error, Result};

/// Shortest round-trip decimal form; stable across platforms and runs.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Header plus stringly rows, written with an optional leading `#` comment line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: CsvTable) {
        debug_assert_eq!(self.header, other.header);
        self.rows.extend(other.rows);
    }

    pub fn write_to<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: "<stream>".into(),
            detail: e.to_string(),
        };
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io {
            path: "<stream>".into(),
            detail: e.to_string(),
        };
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_csv_string(&self, comment: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf, comment).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}
