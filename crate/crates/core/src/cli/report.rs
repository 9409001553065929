//! JSON reports and plot-ready CSV tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::wiener::{sufficiency_sum, LayerSeries};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub grid: Option<usize>,
    pub tol: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub task: String,
    pub scene_hash: String,
    pub inputs: Value,
    pub results: Value,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values serialize");
        s.push('\n');
        s
    }
}

/// Numeric table; every row has one value per header column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 && !(v == 0.0 && v.is_sign_negative()) {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn series(s: &LayerSeries) -> Self {
        let mut t = Table::new(&["j", "s_inner", "gamma", "weight", "partial_sum"]);
        for (term, sum) in s.terms.iter().zip(sufficiency_sum(s)) {
            t.push(vec![term.j as f64, term.s_inner, term.gamma, term.weight, sum]);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|&v| cell(v))).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| Error::Invalid(format!("csv header: {e}")))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::Invalid(format!("csv row: {e}")))?;
            rows.push(rec.iter().map(|c| c.parse::<f64>().map_err(|e| Error::Invalid(format!("csv cell `{c}`: {e}")))).collect::<Result<Vec<_>>>()?);
        }
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(&["j", "gamma"]);
        assert_eq!(t.to_csv(), "j,gamma\n");
    }

    #[test]
    fn twelve_rows_make_thirteen_lines() {
        let mut t = Table::new(&["j", "gamma"]);
        for j in 0..12 {
            t.push(vec![j as f64, 0.1 * j as f64]);
        }
        assert_eq!(t.to_csv().lines().count(), 13);
    }

    #[test]
    fn values_round_trip() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![1.0 / 3.0, -2.5e-300, 7.0]);
        t.push(vec![f64::MAX, 1e20, -0.0]);
        t.push(vec![std::f64::consts::PI * 1e-7, 0.1 + 0.2, 123456789.0]);
        let back = Table::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(back.rows[1][2].is_sign_negative());
    }
}
