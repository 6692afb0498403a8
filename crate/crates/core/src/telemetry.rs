//! Per-iteration metric capture and serialization.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses back
//! to the identical `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Hyperparams;
use crate::surgery::TriadSummary;
use crate::vecmath::Vector;

/// Everything that, together with input files, determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub problem: String,
    pub method: String,
    pub optimizer: String,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub iterations: u64,
    pub snapshot_every: u64,
    /// Problem-specific parameters, rendered as strings.
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    /// Number of updates applied when the losses were measured.
    pub iteration: u64,
    pub loss_total: f64,
    pub task_losses: Vec<f64>,
    pub triad: TriadSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub rows: Vec<TelemetryRow>,
    /// `(iteration, θ)` pairs, strictly increasing in iteration.
    pub snapshots: Vec<(u64, Vector)>,
}

const TRIAD_COLUMNS: [&str; 7] = [
    "cos_min",
    "cos_mean",
    "pct_conflicting",
    "phi_min",
    "curvature_est",
    "cond_a_frac",
    "xi_le1_frac",
];

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse(field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("bad float `{field}`: {e}")))
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        RunLog {
            header,
            rows: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    /// Appends `row`, whose iteration must exceed the last recorded one.
    pub fn record(&mut self, row: TelemetryRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::OutOfOrder {
                    last: last.iteration,
                    got: row.iteration,
                });
            }
            if row.task_losses.len() != last.task_losses.len() {
                return Err(Error::DimensionMismatch {
                    expected: last.task_losses.len(),
                    found: row.task_losses.len(),
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn snapshot(&mut self, iteration: u64, theta: &Vector) -> Result<()> {
        if let Some(&(last, _)) = self.snapshots.last() {
            if iteration <= last {
                return Err(Error::OutOfOrder { last, got: iteration });
            }
        }
        self.snapshots.push((iteration, theta.clone()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TelemetryRow> {
        self.rows.last()
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.first().map_or(0, |r| r.task_losses.len())
    }

    pub fn csv_header(num_tasks: usize) -> Vec<String> {
        let mut cols = vec!["iter".to_string(), "loss_total".to_string()];
        cols.extend((0..num_tasks).map(|i| format!("loss_task_{i}")));
        cols.extend(TRIAD_COLUMNS.iter().map(|s| s.to_string()));
        cols
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Empty("telemetry log"));
        }
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", Self::csv_header(self.num_tasks()).join(","))?;
        for r in &self.rows {
            let t = &r.triad;
            let mut fields = vec![r.iteration.to_string(), fmt(r.loss_total)];
            fields.extend(r.task_losses.iter().map(|&x| fmt(x)));
            fields.extend(
                [
                    t.cos_min,
                    t.cos_mean,
                    t.pct_conflicting,
                    t.phi_min,
                    t.curvature_est,
                    t.cond_a_frac,
                    t.xi_le1_frac,
                ]
                .map(fmt),
            );
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a file produced by [`RunLog::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Vec<TelemetryRow>> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let num_tasks = header
            .len()
            .checked_sub(2 + TRIAD_COLUMNS.len())
            .ok_or_else(|| Error::Config("telemetry header too short".into()))?;
        if header != Self::csv_header(num_tasks) {
            return Err(Error::Config(format!("unexpected telemetry header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let iteration = rec[0]
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("bad iteration `{}`: {e}", &rec[0])))?;
            let vals: Vec<f64> = rec.iter().skip(1).map(parse).collect::<Result<_>>()?;
            let triad = &vals[1 + num_tasks..];
            rows.push(TelemetryRow {
                iteration,
                loss_total: vals[0],
                task_losses: vals[1..1 + num_tasks].to_vec(),
                triad: TriadSummary {
                    cos_min: triad[0],
                    cos_mean: triad[1],
                    pct_conflicting: triad[2],
                    phi_min: triad[3],
                    curvature_est: triad[4],
                    cond_a_frac: triad[5],
                    xi_le1_frac: triad[6],
                },
            });
        }
        Ok(rows)
    }

    /// `iter, theta_0, …, theta_{n-1}`.
    pub fn write_snapshots(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let dim = self.snapshots.first().map_or(0, |(_, t)| t.dim());
        let mut cols = vec!["iter".to_string()];
        cols.extend((0..dim).map(|k| format!("theta_{k}")));
        writeln!(w, "{}", cols.join(","))?;
        for (it, theta) in &self.snapshots {
            let mut fields = vec![it.to_string()];
            fields.extend(theta.iter().map(|&x| fmt(x)));
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// End-of-run digest written as JSON next to the telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub header: RunHeader,
    pub final_task_losses: Vec<f64>,
    pub final_total_loss: f64,
    pub final_theta: Vec<f64>,
    /// Named pass/fail outcomes of checks run alongside training.
    pub verdicts: BTreeMap<String, bool>,
    /// Named scalar results of those checks.
    pub measurements: BTreeMap<String, f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> RunHeader {
        RunHeader {
            problem: "p".into(),
            method: "pcgrad".into(),
            optimizer: "sgd".into(),
            seed: 1,
            hyper: Hyperparams::default(),
            iterations: 10,
            snapshot_every: 1,
            params: BTreeMap::new(),
        }
    }

    fn triad(x: f64) -> TriadSummary {
        TriadSummary {
            cos_min: x,
            cos_mean: x / 3.0,
            pct_conflicting: 0.5,
            phi_min: f64::NAN,
            curvature_est: -x * 1e-300,
            cond_a_frac: 0.0,
            xi_le1_frac: 1.0,
        }
    }

    fn row(it: u64, x: f64) -> TelemetryRow {
        TelemetryRow {
            iteration: it,
            loss_total: x,
            task_losses: vec![x * 0.1, x * 0.9],
            triad: triad(x),
        }
    }

    fn same(a: &[TelemetryRow], b: &[TelemetryRow]) -> bool {
        // NaN-aware bitwise comparison
        let bits = |r: &TelemetryRow| {
            let t = &r.triad;
            let mut v = vec![r.iteration, r.loss_total.to_bits()];
            v.extend(r.task_losses.iter().map(|x| x.to_bits()));
            v.extend(
                [
                    t.cos_min,
                    t.cos_mean,
                    t.pct_conflicting,
                    t.phi_min,
                    t.curvature_est,
                    t.cond_a_frac,
                    t.xi_le1_frac,
                ]
                .map(f64::to_bits),
            );
            v
        };
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| bits(x) == bits(y))
    }

    #[test]
    fn first_record_and_out_of_order() {
        let mut log = RunLog::new(header());
        log.record(row(1, 1.0)).unwrap();
        assert_eq!(log.len(), 1);
        assert!(matches!(log.record(row(1, 2.0)), Err(Error::OutOfOrder { last: 1, got: 1 })));
        assert!(log.record(row(0, 2.0)).is_err());
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn bulk_appends_keep_order() {
        let mut log = RunLog::new(header());
        for k in 0..100_000u64 {
            log.record(row(k + 1, k as f64)).unwrap();
        }
        assert_eq!(log.len(), 100_000);
        assert!(log.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn one_row_file_has_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut log = RunLog::new(header());
        log.record(row(1, 0.25)).unwrap();
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "iter,loss_total,loss_task_0,loss_task_1,cos_min,cos_mean,pct_conflicting,phi_min,curvature_est,cond_a_frac,xi_le1_frac"
        );
    }

    #[test]
    fn empty_log_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RunLog::new(header()).write_csv(&dir.path().join("t.csv")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn csv_round_trip_is_lossless(xs in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            let mut log = RunLog::new(header());
            for (k, &x) in xs.iter().enumerate() {
                log.record(row(k as u64 + 1, x)).unwrap();
            }
            log.write_csv(&path).unwrap();
            let back = RunLog::read_csv(&path).unwrap();
            prop_assert!(same(&back, &log.rows));
        }
    }

    #[test]
    fn snapshots_in_order() {
        let mut log = RunLog::new(header());
        log.snapshot(0, &Vector::from(vec![1.0])).unwrap();
        assert!(log.snapshot(0, &Vector::from(vec![1.0])).is_err());
    }
}
