//! Per-run iteration records and their CSV form.
//!
//! A trace file starts with one `#` comment line carrying the config hash
//! and run seed, followed by a header row
//! `k,evals,theta_0,…,theta_{d-1},q_est,true_q,wall_nanos` and one row per
//! recorded iteration. Missing values are written as empty fields.

use std::io::{self, BufRead, Write};

/// State after iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub evals: u64,
    pub theta: Vec<f64>,
    /// Running quantile estimate; absent for the order-statistics baseline.
    pub q_estimate: Option<f64>,
    /// Objective at `theta` from the closed-form oracle.
    pub true_value: Option<f64>,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub dim: usize,
    pub rows: Vec<TraceRow>,
    pub iterations: u64,
    pub total_evals: u64,
    pub final_theta: Vec<f64>,
    pub final_q: Option<f64>,
    pub final_true: Option<f64>,
}

/// Provenance written as the first line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub config_hash: String,
    pub seed: u64,
}

impl RunTrace {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert!(self.rows.last().is_none_or(|last| last.k < row.k && last.evals < row.evals));
        self.rows.push(row);
    }

    pub fn finish(
        &mut self,
        iterations: u64,
        total_evals: u64,
        theta: Vec<f64>,
        q: Option<f64>,
        true_value: Option<f64>,
    ) {
        self.iterations = iterations;
        self.total_evals = total_evals;
        self.final_theta = theta;
        self.final_q = q;
        self.final_true = true_value;
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["k".to_string(), "evals".to_string()];
        names.extend((0..self.dim).map(|i| format!("theta_{i}")));
        names.extend(["q_est", "true_q", "wall_nanos"].map(String::from));
        names
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, header: &TraceHeader) -> io::Result<()> {
        writeln!(out, "# config_hash={} seed={}", header.config_hash, header.seed)?;
        writeln!(out, "{}", self.column_names().join(","))?;
        for r in &self.rows {
            let mut line = format!("{},{}", r.k, r.evals);
            for t in &r.theta {
                line.push(',');
                line.push_str(&t.to_string());
            }
            for v in [r.q_estimate, r.true_value] {
                line.push(',');
                if let Some(v) = v {
                    line.push_str(&v.to_string());
                }
            }
            line.push(',');
            line.push_str(&r.wall_nanos.to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parses a file written by [`RunTrace::write_csv`]. The final state is
    /// taken from the last row.
    pub fn read_csv<R: BufRead>(input: R) -> io::Result<(Option<TraceHeader>, RunTrace)> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut header = None;
        let mut trace: Option<RunTrace> = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                header = parse_meta(meta);
                continue;
            }
            let Some(t) = trace.as_mut() else {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() < 5 || cols[0] != "k" || cols[1] != "evals" {
                    return Err(bad(format!("line {}: unexpected header {line:?}", lineno + 1)));
                }
                trace = Some(RunTrace::new(cols.len() - 5));
                continue;
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != t.dim + 5 {
                return Err(bad(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    t.dim + 5,
                    fields.len()
                )));
            }
            let num = |s: &str| -> io::Result<f64> {
                s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            let int = |s: &str| -> io::Result<u64> {
                s.parse::<u64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            let opt = |s: &str| -> io::Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            let d = t.dim;
            t.rows.push(TraceRow {
                k: int(fields[0])?,
                evals: int(fields[1])?,
                theta: fields[2..2 + d].iter().map(|s| num(s)).collect::<io::Result<_>>()?,
                q_estimate: opt(fields[2 + d])?,
                true_value: opt(fields[3 + d])?,
                wall_nanos: int(fields[4 + d])?,
            });
        }
        let mut trace = trace.ok_or_else(|| bad("missing header row".into()))?;
        if let Some(last) = trace.rows.last().cloned() {
            trace.finish(last.k, last.evals, last.theta, last.q_estimate, last.true_value);
        }
        Ok((header, trace))
    }
}

fn parse_meta(meta: &str) -> Option<TraceHeader> {
    let mut hash = None;
    let mut seed = None;
    for token in meta.split_whitespace() {
        match token.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => {}
        }
    }
    Some(TraceHeader { config_hash: hash?, seed: seed? })
}
