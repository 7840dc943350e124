//! Experiments, configuration, persistence and the command line.
//!
//! Each experiment takes an [`ExperimentConfig`] and returns an [`Outcome`]: a list of
//! gated [`ResultRecord`]s plus plot-ready [`Table`]s. [`write_outcome`] persists one CSV
//! per table, `records.csv`, and `metadata.json`.

pub mod cli;
pub mod config;
pub mod experiments;

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::ExperimentConfig;

use crate::Error;

/// Acceptance rule attached to a record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Gate {
    /// `|value - target| <= tol`.
    Tolerance { tol: f64 },
    /// `|value - target| <= k·se`.
    Se { k: f64 },
    /// `|value - target| > k·se`.
    SeApart { k: f64 },
    /// `value - target >= k·se`.
    Exceeds { k: f64 },
    AtMost,
    Range { lo: f64, hi: f64 },
    Report,
}

impl Gate {
    pub fn label(&self) -> String {
        match self {
            Gate::Tolerance { tol } => format!("|d|<={tol:e}"),
            Gate::Se { k } => format!("|d|<={k}se"),
            Gate::SeApart { k } => format!("|d|>{k}se"),
            Gate::Exceeds { k } => format!("d>={k}se"),
            Gate::AtMost => "value<=target".into(),
            Gate::Range { lo, hi } => format!("[{lo},{hi}]"),
            Gate::Report => "report".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub statistic: String,
    pub inputs: String,
    pub value: f64,
    pub se: Option<f64>,
    pub target: Option<f64>,
    pub gate: Gate,
    pub pass: Option<bool>,
}

impl ResultRecord {
    pub fn new(experiment: &str, statistic: &str, inputs: impl Into<String>, value: f64) -> Self {
        ResultRecord { experiment: experiment.into(), statistic: statistic.into(), inputs: inputs.into(), value, se: None, target: None, gate: Gate::Report, pass: None }
    }

    pub fn se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    pub fn target(mut self, t: f64) -> Self {
        self.target = Some(t);
        self
    }

    /// Attach the gate and evaluate it.
    pub fn gate(mut self, gate: Gate) -> Self {
        self.gate = gate;
        let t = self.target.unwrap_or(0.0);
        let d = self.value - t;
        let se = self.se.unwrap_or(0.0);
        self.pass = match gate {
            Gate::Tolerance { tol } => Some(d.abs() <= tol),
            Gate::Se { k } => Some(d.abs() <= k * se),
            Gate::SeApart { k } => Some(d.abs() > k * se),
            Gate::Exceeds { k } => Some(d >= k * se),
            Gate::AtMost => Some(self.value <= t),
            Gate::Range { lo, hi } => Some(self.value >= lo && self.value <= hi),
            Gate::Report => None,
        };
        self
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

/// Plot-ready table; cells are preformatted so files are byte-stable.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Column values parsed back as numbers; non-numeric cells become NaN.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.columns.iter().position(|c| c == name).expect("column exists");
        self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect()
    }
}

/// Shortest round-trip decimal, so equal values always print identically.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub experiment: String,
    pub records: Vec<ResultRecord>,
    pub tables: Vec<Table>,
    pub partial: bool,
}

impl Outcome {
    pub fn new(experiment: &str) -> Self {
        Outcome { experiment: experiment.into(), ..Default::default() }
    }

    pub fn failures(&self) -> impl Iterator<Item = &ResultRecord> {
        self.records.iter().filter(|r| r.failed())
    }

    pub fn all_pass(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn record(&self, statistic: &str) -> Option<&ResultRecord> {
        self.records.iter().find(|r| r.statistic == statistic)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn merge(&mut self, other: Outcome) {
        self.records.extend(other.records);
        self.tables.extend(other.tables);
        self.partial |= other.partial;
    }

    /// Human-readable summary of the gated records.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let status = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "----",
            };
            let tgt = r.target.map(|t| format!(" target={t:.6e}")).unwrap_or_default();
            let se = r.se.map(|e| format!(" se={e:.3e}")).unwrap_or_default();
            s.push_str(&format!("{status} {:<28} {:<34} value={:.6e}{se}{tgt} [{}]\n", r.statistic, r.inputs, r.value, r.gate.label()));
        }
        if self.partial {
            s.push_str("(partial: budget exhausted)\n");
        }
        s
    }
}

/// Soft wall-clock budget checked between experiment stages.
pub struct Budget {
    start: Instant,
    limit: Option<f64>,
}

impl Budget {
    pub fn new(limit: Option<f64>) -> Self {
        Budget { start: Instant::now(), limit }
    }

    pub fn exhausted(&self) -> bool {
        self.limit.is_some_and(|l| self.start.elapsed().as_secs_f64() > l)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub seed: u64,
    pub threads: usize,
    pub config_hash: String,
    pub schema: u32,
    pub version: String,
    pub wall_time_seconds: f64,
    pub partial: bool,
    pub records_passed: usize,
    pub records_failed: usize,
    pub tables: Vec<String>,
}

impl Metadata {
    pub fn new(cfg: &ExperimentConfig, outcome: &Outcome, wall: f64) -> Self {
        Metadata {
            experiment: outcome.experiment.clone(),
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            config_hash: cfg.hash(),
            schema: config::SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: wall,
            partial: outcome.partial,
            records_passed: outcome.records.iter().filter(|r| r.pass == Some(true)).count(),
            records_failed: outcome.records.iter().filter(|r| r.failed()).count(),
            tables: outcome.tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Write `<table>.csv` for every table, `records.csv` and `metadata.json` into `dir`.
pub fn write_outcome(dir: &Path, outcome: &Outcome, meta: &Metadata) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    for t in &outcome.tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name))).map_err(csv_err)?;
        w.write_record(&t.columns).map_err(csv_err)?;
        for r in &t.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("records.csv")).map_err(csv_err)?;
    w.write_record(["experiment", "statistic", "inputs", "value", "se", "target", "gate", "pass"]).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
    for r in &outcome.records {
        let pass = match r.pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "",
        };
        w.write_record([r.experiment.clone(), r.statistic.clone(), r.inputs.clone(), fmt(r.value), opt(r.se), opt(r.target), r.gate.label(), pass.into()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join("metadata.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates_evaluate() {
        let r = ResultRecord::new("x", "s", "", 1.05).se(0.02).target(1.0).gate(Gate::Se { k: 3.0 });
        assert_eq!(r.pass, Some(true));
        let r = ResultRecord::new("x", "s", "", 1.1).se(0.02).target(1.0).gate(Gate::SeApart { k: 3.0 });
        assert_eq!(r.pass, Some(true));
        let r = ResultRecord::new("x", "s", "", 0.05).se(0.02).gate(Gate::Exceeds { k: 3.0 });
        assert_eq!(r.pass, Some(false));
        let r = ResultRecord::new("x", "s", "", f64::NAN).target(0.0).gate(Gate::Tolerance { tol: 1.0 });
        assert_eq!(r.pass, Some(false));
        assert_eq!(ResultRecord::new("x", "s", "", 3.0).gate(Gate::Report).pass, None);
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Outcome::new("demo");
        let mut t = Table::new("demo_table", &["a", "b"]);
        t.push(vec![fmt(0.1), "x,y".into()]);
        o.tables.push(t);
        o.records.push(ResultRecord::new("demo", "stat", "n=1", 2.0).target(2.0).gate(Gate::Tolerance { tol: 0.0 }));
        let cfg = ExperimentConfig::default();
        write_outcome(dir.path(), &o, &Metadata::new(&cfg, &o, 0.0)).unwrap();
        let table = std::fs::read_to_string(dir.path().join("demo_table.csv")).unwrap();
        assert_eq!(table, "a,b\n0.1,\"x,y\"\n");
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["records_passed"], 1);
    }
}
