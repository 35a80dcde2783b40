//! The `qopt` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::load_config;
use super::table::{load_reports, render, TableFormat};
use super::{read_report, read_traces, run_experiment, HarnessError, SUMMARY_FILE};
use crate::optimizers::FeasibleBox;
use crate::problems::{
    BlackBox, Mm1Problem, NoiseKind, TestCase, BENCHMARK_LEVELS, REFERENCE_OPTIMA,
};
use crate::stats::empirical_rate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qopt", version, about = "Quantile optimization of noisy black boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every replication of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of replications.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate every summary.json below a directory.
    Table {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Log-log slope of the ensemble mean distance to the optimum.
    Rate {
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated optimum; derived from the summary for the cases.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta_star: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1_000)]
        k_lo: u64,
        /// Defaults to 10⁵, or the shortest trace if that is shorter.
        #[arg(long)]
        k_hi: Option<u64>,
    },
    /// Print the built-in problems and their optimal values.
    ListProblems,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        Command::Run { config, runs, seed, out: dir } => cmd_run(&config, runs, seed, dir, out, err),
        Command::Table { dir, format } => {
            let format = match format {
                Format::Markdown => TableFormat::Markdown,
                Format::Csv => TableFormat::Csv,
            };
            match load_reports(&dir) {
                Ok(reports) if reports.is_empty() => {
                    let _ = writeln!(err, "no {SUMMARY_FILE} found under {}", dir.display());
                    EXIT_FAILURE
                }
                Ok(reports) => {
                    let _ = write!(out, "{}", render(&reports, format));
                    EXIT_OK
                }
                Err(e) => fail(err, e),
            }
        }
        Command::Rate { dir, theta_star, k_lo, k_hi } => cmd_rate(&dir, theta_star, k_lo, k_hi, out, err),
        Command::ListProblems => {
            for line in problem_listing() {
                let _ = writeln!(out, "{line}");
            }
            EXIT_OK
        }
    }
}

fn fail(err: &mut dyn Write, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {e}");
    EXIT_FAILURE
}

fn usage(err: &mut dyn Write, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {e}");
    EXIT_USAGE
}

fn cmd_run(
    path: &Path,
    runs: Option<usize>,
    seed: Option<u64>,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let mut cfg = match load_config(path) {
        Ok(cfg) => cfg,
        Err(e) => return usage(err, e),
    };
    if let Some(runs) = runs {
        if runs == 0 {
            return usage(err, "--runs must be positive");
        }
        cfg.runs = runs;
    }
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    if let Some(dir) = dir {
        cfg.output_dir = dir;
    }
    match run_experiment(&cfg) {
        Ok(outcome) => {
            let s = &outcome.report.summary;
            let _ = writeln!(
                out,
                "{}: mean={} stderr={} runs={} -> {}",
                outcome.report.label,
                s.mean_final,
                s.stderr_final,
                s.runs,
                cfg.output_dir.display()
            );
            EXIT_OK
        }
        Err(e @ HarnessError::Config(_)) => usage(err, e),
        Err(e) => fail(err, e),
    }
}

fn cmd_rate(
    dir: &Path,
    theta_star: Option<Vec<f64>>,
    k_lo: u64,
    k_hi: Option<u64>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let runs = match read_traces(dir) {
        Ok(r) if r.is_empty() => return fail(err, format!("no traces in {}", dir.display())),
        Ok(r) => r,
        Err(e) => return fail(err, e),
    };
    let theta_star = match theta_star {
        Some(t) => t,
        None => match optimum_from_summary(&dir.join(SUMMARY_FILE)) {
            Ok(t) => t,
            Err(e) => return usage(err, format!("{e}; pass --theta-star")),
        },
    };
    let traces: Vec<_> = runs.into_iter().map(|(_, _, t)| t).collect();
    if let Some(t) = traces.iter().find(|t| t.dim != theta_star.len()) {
        return usage(err, format!("--theta-star has {} coordinates, traces have {}", theta_star.len(), t.dim));
    }
    let shortest = traces.iter().map(|t| t.iterations).min().unwrap_or(0);
    let k_hi = k_hi.unwrap_or(shortest.min(100_000));
    match empirical_rate(&traces, &theta_star, (k_lo, k_hi)) {
        Ok(slope) => {
            let _ = writeln!(out, "slope={slope} runs={} window=[{k_lo},{k_hi}]", traces.len());
            EXIT_OK
        }
        Err(e) => fail(err, e),
    }
}

fn optimum_from_summary(path: &Path) -> Result<Vec<f64>, String> {
    let report = read_report(path).map_err(|e| e.to_string())?;
    let id = report
        .summary
        .problem
        .strip_prefix("case")
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| format!("no built-in optimum for {}", report.summary.problem))?;
    let noise = report.noise.unwrap_or(NoiseKind::Normal);
    let case = TestCase::new(id, noise).map_err(|e| e.to_string())?;
    case.optimum(report.summary.phi).map(|(t, _)| t).map_err(|e| e.to_string())
}

fn format_box(b: &FeasibleBox) -> String {
    match b.uniform_bounds() {
        Some((lo, hi)) => format!("[{lo},{hi}]"),
        None => b
            .lower()
            .iter()
            .zip(b.upper())
            .map(|(l, u)| format!("[{l},{u}]"))
            .collect::<Vec<_>>()
            .join("x"),
    }
}

/// One line per (problem, noise, φ) with its optimal value.
pub fn problem_listing() -> Vec<String> {
    let mut lines = Vec::new();
    for (row, optima) in REFERENCE_OPTIMA.iter().enumerate() {
        let id = row as u8 + 1;
        for (n, noise) in NoiseKind::ALL.into_iter().enumerate() {
            let case = TestCase::new(id, noise).expect("cases 1..=6 exist");
            for (p, phi) in BENCHMARK_LEVELS.into_iter().enumerate() {
                lines.push(format!(
                    "case{id} d={} box={} q*({noise},{phi})={:.2}",
                    case.dim(),
                    format_box(case.bounds()),
                    optima[2 * n + p]
                ));
            }
        }
    }
    let queue = Mm1Problem::standard();
    for phi in [0.5, 0.95] {
        let (_, cost, _) = queue.optimum(phi).expect("standard queue has an optimum");
        lines.push(format!(
            "mm1 d={} box={} cost*({phi})={cost:.2}",
            queue.dim(),
            format_box(queue.bounds())
        ));
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn listing_contains_table_entries() {
        let (code, out, _) = call(&["qopt", "list-problems"]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l == "case3 d=20 box=[-20,20] q*(normal,0.6)=-717.25"), "{out}");
        assert!(out.lines().any(|l| l == "mm1 d=4 box=[1,20] cost*(0.5)=0.62"), "{out}");
        assert!(out.lines().any(|l| l == "mm1 d=4 box=[1,20] cost*(0.95)=2.66"), "{out}");
        assert_eq!(out.lines().count(), 26);
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        let (code, _, err) = call(&["qopt", "run"]);
        assert_eq!(code, 2);
        assert!(err.contains("Usage"), "{err}");
        let (code, _, _) = call(&["qopt", "frobnicate"]);
        assert_eq!(code, 2);
        let (code, _, _) = call(&["qopt", "run", "--config", "/nonexistent/qopt.json"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, out, _) = call(&["qopt", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("list-problems"));
    }
}
