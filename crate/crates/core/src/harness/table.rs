//! Results tables: one block per (noise, φ), problems down, algorithms
//! across, cells `mean (stderr)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Algorithm;
use super::{read_report, ExperimentReport, HarnessError, SUMMARY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Finds every summary file under `dir`, sorted by path.
pub fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|source| HarnessError::Io { path: d.clone(), source })?;
        for entry in entries {
            let path = entry.map_err(|source| HarnessError::Io { path: d.clone(), source })?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == SUMMARY_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn load_reports(dir: &Path) -> Result<Vec<ExperimentReport>, HarnessError> {
    find_summaries(dir)?.iter().map(|p| read_report(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Block {
    noise: String,
    /// `φ` bits, ordered as numbers for positive values.
    phi_bits: u64,
}

#[derive(Debug, Default)]
struct BlockRows {
    /// problem → (optimum, algorithm → (mean, stderr))
    rows: BTreeMap<ProblemKey, (Option<f64>, BTreeMap<Algorithm, (f64, f64)>)>,
}

/// Orders `case2` before `case10` and the queue after the cases.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ProblemKey(u32, String);

impl ProblemKey {
    fn new(label: &str) -> Self {
        let n = label.strip_prefix("case").and_then(|n| n.parse().ok()).unwrap_or(u32::MAX);
        Self(n, label.to_string())
    }
}

fn cell(mean: f64, stderr: f64) -> String {
    format!("{mean:.2} ({stderr:.1e})")
}

/// Lays out `reports` as tables. A later report for the same cell
/// replaces an earlier one.
pub fn render(reports: &[ExperimentReport], format: TableFormat) -> String {
    let mut blocks: BTreeMap<Block, BlockRows> = BTreeMap::new();
    let mut algorithms: BTreeSet<Algorithm> = BTreeSet::new();
    for r in reports {
        let Ok(algorithm) = r.summary.algorithm.parse::<Algorithm>() else { continue };
        algorithms.insert(algorithm);
        let block = Block {
            noise: r.noise.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
            phi_bits: r.summary.phi.to_bits(),
        };
        let row = blocks
            .entry(block)
            .or_default()
            .rows
            .entry(ProblemKey::new(&r.summary.problem))
            .or_default();
        if row.0.is_none() {
            row.0 = r.optimum;
        }
        row.1.insert(algorithm, (r.summary.mean_final, r.summary.stderr_final));
    }
    let columns: Vec<Algorithm> = algorithms.into_iter().collect();

    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            for (i, (block, rows)) in blocks.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                let phi = f64::from_bits(block.phi_bits);
                writeln!(out, "### noise={}, phi={phi}", block.noise).unwrap();
                out.push('\n');
                let mut header = "| problem | optimum |".to_string();
                let mut rule = "|---|---|".to_string();
                for a in &columns {
                    write!(header, " {a} |").unwrap();
                    rule.push_str("---|");
                }
                writeln!(out, "{header}\n{rule}").unwrap();
                for (problem, (optimum, cells)) in &rows.rows {
                    let optimum = optimum.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
                    write!(out, "| {} | {optimum} |", problem.1).unwrap();
                    for a in &columns {
                        match cells.get(a) {
                            Some((m, s)) => write!(out, " {} |", cell(*m, *s)).unwrap(),
                            None => out.push_str(" - |"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        TableFormat::Csv => {
            out.push_str("noise,phi,problem,optimum");
            for a in &columns {
                write!(out, ",{a}_mean,{a}_stderr").unwrap();
            }
            out.push('\n');
            for (block, rows) in &blocks {
                let phi = f64::from_bits(block.phi_bits);
                for (problem, (optimum, cells)) in &rows.rows {
                    let optimum = optimum.map(|v| v.to_string()).unwrap_or_default();
                    write!(out, "{},{phi},{},{optimum}", block.noise, problem.1).unwrap();
                    for a in &columns {
                        match cells.get(a) {
                            Some((m, s)) => write!(out, ",{m},{s}").unwrap(),
                            None => out.push_str(",,"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}
