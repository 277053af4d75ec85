//! Tables, assertions and the artifacts written for every run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::LabError;

/// One checked claim. `invariant` names the module invariant it instantiates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub invariant: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub status: &'static str,
    pub exit_code: i32,
    pub all_pass: bool,
    pub assertions: Vec<Assertion>,
    pub metrics: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything a run produces; filled incrementally so that a failing run
/// still leaves the rows computed so far.
#[derive(Debug, Clone)]
pub struct Run {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub assertions: Vec<Assertion>,
    pub metrics: Map<String, Value>,
}

impl Run {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Run {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
            assertions: Vec::new(),
            metrics: Map::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn check(&mut self, name: impl Into<String>, invariant: &str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.into(),
            invariant: invariant.to_string(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(value).expect("metric serialises"));
    }

    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>, LabError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| LabError::Output(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| LabError::Output(e.to_string()))?;
        }
        w.into_inner().map_err(|e| LabError::Output(e.to_string()))
    }
}

/// Formats a float so that it parses back to the same value; the output
/// depends only on the value.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn nums(values: &[f64]) -> String {
    let mut s = String::from("[");
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{v:.3e}");
    }
    s.push(']');
    s
}

/// Where the artifacts of a run go.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path, csv: Option<&str>, summary: Option<&str>, name: &str) -> Self {
        Artifacts {
            csv: dir.join(csv.map(str::to_string).unwrap_or_else(|| format!("{name}.csv"))),
            summary: dir.join(summary.map(str::to_string).unwrap_or_else(|| format!("{name}.json"))),
        }
    }

    pub fn write(&self, run: &Run, summary: &Summary) -> Result<(), LabError> {
        for p in [&self.csv, &self.summary] {
            if let Some(d) = p.parent() {
                fs::create_dir_all(d).map_err(|e| LabError::Output(format!("{}: {e}", d.display())))?;
            }
        }
        fs::write(&self.csv, run.csv_bytes()?).map_err(|e| LabError::Output(format!("{}: {e}", self.csv.display())))?;
        let mut json = serde_json::to_string_pretty(summary).expect("summary serialises");
        json.push('\n');
        fs::write(&self.summary, json).map_err(|e| LabError::Output(format!("{}: {e}", self.summary.display())))
    }
}
