//! Reports: a JSON document per run, or the run's table as CSV.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, Format};

/// A pass/fail verification gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Gate {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// Plot-ready table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip text of a float, as used in every table.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

/// What a subcommand produces before it is wrapped into a report.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: BTreeMap<String, Value>,
    pub table: Table,
    pub gates: Vec<Gate>,
    pub provenance: BTreeMap<String, Value>,
}

impl Outcome {
    pub fn output(&mut self, key: &str, v: impl Serialize) {
        self.outputs.insert(key.into(), serde_json::to_value(v).expect("outputs serialize"));
    }

    pub fn provenance(&mut self, key: &str, v: impl Serialize) {
        self.provenance.insert(key.into(), serde_json::to_value(v).expect("provenance serializes"));
    }

    pub fn gate(&mut self, name: &str, pass: bool, detail: String) {
        self.gates.push(Gate::new(name, pass, detail));
    }
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
    pub provenance: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, Value>,
    pub gates: Vec<Gate>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, outcome: Outcome, wall_time_s: f64) -> (Self, Table) {
        let pass = outcome.gates.iter().all(|g| g.pass);
        let report = Self {
            tool: "chaoslab",
            version: env!("CARGO_PKG_VERSION"),
            command: config.command.clone().unwrap_or_default(),
            config,
            wall_time_s,
            provenance: outcome.provenance,
            outputs: outcome.outputs,
            gates: outcome.gates,
            pass,
        };
        (report, outcome.table)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, table: &Table, format: Format) -> Vec<u8> {
        match format {
            Format::Json => self.to_json().into_bytes(),
            Format::Csv => {
                let mut buf = Vec::new();
                table.write(&mut buf).expect("writing to memory");
                buf
            }
        }
    }
}
