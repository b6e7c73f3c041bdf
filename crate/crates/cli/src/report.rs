//! Report emission: CSV tables, a line-delimited summary with provenance,
//! and a plain-text log. Floats are written in a fixed scientific format
//! so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // keep integers readable
        format!("{v}")
    } else {
        format!("{v:.12e}")
    }
}

/// One CSV table: a header row plus data rows.
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Optional leading label column (comparator names and the like).
    pub labels: Option<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            labels: None,
        }
    }

    pub fn with_labels(mut self) -> Self {
        self.labels = Some(Vec::new());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn push_labeled(&mut self, label: &str, row: Vec<f64>) {
        self.labels.as_mut().unwrap().push(label.to_string());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = String::new();
        if self.labels.is_some() {
            out.push_str("name,");
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(labels) = &self.labels {
                out.push_str(&labels[i]);
                out.push(',');
            }
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// One summary entry: a number or flag with the module operation that
/// produced it.
pub struct SummaryLine {
    pub key: String,
    pub value: String,
    pub provenance: String,
}

/// A finished experiment report.
pub struct Report {
    pub command: String,
    pub tables: Vec<Table>,
    pub summary: Vec<SummaryLine>,
    pub log: Vec<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tables: Vec::new(),
            summary: Vec::new(),
            log: Vec::new(),
            pass: true,
        }
    }

    pub fn add_value(&mut self, key: &str, value: f64, provenance: &str) {
        self.summary.push(SummaryLine {
            key: key.to_string(),
            value: fmt_num(value),
            provenance: provenance.to_string(),
        });
    }

    pub fn add_flag(&mut self, key: &str, value: bool, provenance: &str) {
        self.summary.push(SummaryLine {
            key: key.to_string(),
            value: value.to_string(),
            provenance: provenance.to_string(),
        });
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    /// Writes every artifact into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(out_dir)?;
        for table in &self.tables {
            fs::write(out_dir.join(format!("{}.csv", table.name)), table.render())?;
        }
        let mut summary = String::new();
        writeln!(summary, "schema={}", crate::spec_file::SCHEMA).unwrap();
        writeln!(summary, "command={}", self.command).unwrap();
        for line in &self.summary {
            writeln!(
                summary,
                "{}={} provenance={}",
                line.key, line.value, line.provenance
            )
            .unwrap();
        }
        writeln!(summary, "pass={}", self.pass).unwrap();
        fs::write(out_dir.join("summary.txt"), summary)?;
        let mut log = String::new();
        for line in &self.log {
            writeln!(log, "{line}").unwrap();
        }
        fs::write(out_dir.join("run.log"), log)?;
        Ok(())
    }
}
