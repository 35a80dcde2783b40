//! Seeded replication of experiments and their on-disk results.
//!
//! A run directory holds one trace CSV per replication
//! (`<label>_run<j>.csv`) and a `summary.json`. While runs are in flight an
//! `INCOMPLETE` marker sits next to them; it is removed once every trace
//! and the summary have been written.

pub mod cli;
pub mod config;
pub mod table;
pub mod trace;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{load_config, Algorithm, ConfigError, ExperimentConfig, ProblemSpec, QueueSettings};
use trace::{RunTrace, TraceHeader};

use crate::estimators::{CrnMode, TrackerState};
use crate::optimizers::{
    run_qg, run_qg_penalized, run_tracking, OptimError, QuadraticPenalty, TrackingSettings,
};
use crate::problems::{reference_optimum, BlackBox, Mm1Problem, NoiseKind, TestCase};
use crate::stats::{summarize, ExperimentSummary, StatsError};

pub const SUMMARY_FILE: &str = "summary.json";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
/// Environment variable capping concurrent replications.
pub const THREADS_ENV: &str = "QOPT_THREADS";
const CURVE_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: OptimError,
    },
    #[error("run {0} produced no true objective value")]
    MissingTrueValue(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid {QOPT}: {0}", QOPT = THREADS_ENV)]
    Threads(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Derives an independent 64-bit seed for stream `label` of run `run`.
///
/// Seeds depend only on their own `(base_seed, run, label)`, so adding runs
/// leaves earlier ones untouched.
pub fn split_seed(base_seed: u64, run: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(run.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A ready-to-run problem instance.
pub enum Instance {
    Case(TestCase),
    Queue(Mm1Problem),
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        Ok(match &cfg.problem {
            ProblemSpec::Case { id, noise } => Instance::Case(
                TestCase::new(*id, *noise).map_err(|e| ConfigError::Invalid {
                    field: "problem".into(),
                    message: e.to_string(),
                })?,
            ),
            ProblemSpec::Mm1(q) => {
                let margin = match cfg.algorithm.scheme() {
                    Some(_) => cfg.schedule.gains_at(1).c,
                    None => cfg.qg.perturbation(1),
                };
                Instance::Queue(q.build(margin)?)
            }
        })
    }

    pub fn black_box(&self) -> &dyn BlackBox {
        match self {
            Instance::Case(c) => c,
            Instance::Queue(q) => q,
        }
    }

    pub fn penalty(&self) -> Option<&QuadraticPenalty> {
        match self {
            Instance::Case(_) => None,
            Instance::Queue(q) => Some(q.penalty()),
        }
    }

    /// Optimal objective value: the tabulated optimum when one exists,
    /// otherwise the closed-form or numerical minimum.
    pub fn optimum(&self, phi: f64) -> Option<(Vec<f64>, f64)> {
        match self {
            Instance::Case(c) => {
                let (theta, value) = c.optimum(phi).ok()?;
                Some((theta, reference_optimum(c.id(), c.noise(), phi).unwrap_or(value)))
            }
            Instance::Queue(q) => q.optimum(phi).ok().map(|(theta, cost, _)| (theta, cost)),
        }
    }
}

/// Runs replication `run` of `cfg` without touching the filesystem.
pub fn run_once(cfg: &ExperimentConfig, instance: &Instance, run: usize) -> Result<RunTrace, HarnessError> {
    let problem = instance.black_box();
    let penalty = instance.penalty();
    let theta0 = match &cfg.theta0 {
        Some(t) => t.clone(),
        None => {
            let mut init = ChaCha8Rng::seed_from_u64(split_seed(cfg.base_seed, run as u64, "init"));
            problem.bounds().sample_uniform(&mut init)
        }
    };
    let seed = split_seed(cfg.base_seed, run as u64, "optimizer");
    let result = match cfg.algorithm.scheme() {
        Some(scheme) => {
            let crn = if cfg.algorithm.uses_crn() { CrnMode::Common } else { CrnMode::Independent };
            let mut settings =
                TrackingSettings::new(cfg.phi, cfg.eval_budget, crn).with_stride(cfg.trace_stride);
            if let Some([lo, hi]) = cfg.q_bounds {
                settings.q_bounds = (lo, hi);
            }
            let init = TrackerState::new(theta0);
            run_tracking(problem, scheme, &cfg.schedule, &settings, &init, seed, penalty)
        }
        None => match penalty {
            Some(p) => run_qg_penalized(
                problem,
                p,
                &cfg.qg,
                cfg.phi,
                &theta0,
                cfg.eval_budget,
                seed,
                cfg.trace_stride,
            ),
            None => run_qg(problem, &cfg.qg, cfg.phi, &theta0, cfg.eval_budget, seed, cfg.trace_stride),
        },
    };
    result.map_err(|source| HarnessError::Run { run, source })
}

/// Runs every replication in parallel (capped by `QOPT_THREADS`) and
/// returns the traces in run order.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<Vec<RunTrace>, HarnessError> {
    let instance = Instance::build(cfg)?;
    in_pool(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|j| run_once(cfg, &instance, j))
            .collect::<Result<Vec<_>, _>>()
    })?
}

fn in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| HarnessError::Threads(v.clone()))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Threads(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(flatten)]
    pub summary: ExperimentSummary,
    pub label: String,
    pub noise: Option<NoiseKind>,
    pub config_hash: String,
    pub base_seed: u64,
    pub eval_budget: u64,
    /// Optimal objective value, when known.
    pub optimum: Option<f64>,
    pub final_values: Vec<f64>,
    pub iterations: Vec<u64>,
    pub total_evals: Vec<u64>,
    pub complete: bool,
}

/// Traces and summary of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub traces: Vec<RunTrace>,
    pub report: ExperimentReport,
}

pub fn trace_path(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.output_dir.join(format!("{}_run{run}.csv", cfg.label()))
}

/// Runs all replications, writing each trace as soon as its run ends and
/// the summary last.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, format!("{}\n", cfg.label())).map_err(io_err(&marker))?;

    let instance = Instance::build(cfg)?;
    let hash = cfg.config_hash();
    let traces = in_pool(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|j| {
                let trace = run_once(cfg, &instance, j)?;
                let path = trace_path(cfg, j);
                let header = TraceHeader {
                    config_hash: hash.clone(),
                    seed: split_seed(cfg.base_seed, j as u64, "optimizer"),
                };
                write_trace(&path, &trace, &header)?;
                Ok(trace)
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })??;

    let finals = traces
        .iter()
        .enumerate()
        .map(|(j, t)| t.final_true.ok_or(HarnessError::MissingTrueValue(j)))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(
        cfg.algorithm.as_str(),
        &cfg.problem.label(),
        cfg.phi,
        &finals,
        &traces,
        CURVE_POINTS,
    )?;
    let report = ExperimentReport {
        summary,
        label: cfg.label(),
        noise: cfg.problem.noise(),
        config_hash: hash,
        base_seed: cfg.base_seed,
        eval_budget: cfg.eval_budget,
        optimum: instance.optimum(cfg.phi).map(|(_, v)| v),
        final_values: finals,
        iterations: traces.iter().map(|t| t.iterations).collect(),
        total_evals: traces.iter().map(|t| t.total_evals).collect(),
        complete: true,
    };
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    fs::remove_file(&marker).map_err(io_err(&marker))?;
    Ok(ExperimentOutcome { traces, report })
}

fn write_trace(path: &Path, trace: &RunTrace, header: &TraceHeader) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    trace.write_csv(&mut out, header).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

/// Reads every `*_run<j>.csv` in `dir`, ordered by run index.
pub fn read_traces(dir: &Path) -> Result<Vec<(usize, TraceHeader, RunTrace)>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(run) = name
            .strip_suffix(".csv")
            .and_then(|s| s.rsplit_once("_run"))
            .and_then(|(_, j)| j.parse::<usize>().ok())
        else {
            continue;
        };
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let (header, trace) = RunTrace::read_csv(io::BufReader::new(file)).map_err(io_err(&path))?;
        let header = header.ok_or_else(|| HarnessError::Io {
            path: path.clone(),
            source: io::Error::new(io::ErrorKind::InvalidData, "missing provenance line"),
        })?;
        out.push((run, header, trace));
    }
    out.sort_by_key(|(j, _, _)| *j);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, algorithm: &str, problem: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{"problem":"{problem}","algorithm":"{algorithm}","phi":0.6,"eval_budget":3000,
                "runs":3,"base_seed":11,"output_dir":{:?}}}"#,
            dir.to_str().unwrap()
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn seeds_are_split_per_run_and_stream() {
        let a = split_seed(0, 0, "optimizer");
        assert_eq!(a, split_seed(0, 0, "optimizer"));
        assert_ne!(a, split_seed(0, 1, "optimizer"));
        assert_ne!(a, split_seed(0, 0, "init"));
        assert_ne!(a, split_seed(1, 0, "optimizer"));
    }

    #[test]
    fn experiment_writes_traces_and_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path(), "spqo", "case1");
        let outcome = run_experiment(&cfg).unwrap();
        assert!(!tmp.path().join(INCOMPLETE_MARKER).exists());
        let report = read_report(&tmp.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(report, outcome.report);
        assert!(report.complete);
        assert_eq!(report.summary.runs, 3);
        assert_eq!(report.optimum, reference_optimum(1, NoiseKind::Normal, 0.6));
        for (j, t) in outcome.traces.iter().enumerate() {
            assert!(trace_path(&cfg, j).exists());
            assert!(t.total_evals <= cfg.eval_budget);
            assert_eq!(t.total_evals, 3 * t.iterations);
        }
        assert_eq!(report.total_evals, vec![3000; 3]);

        let back = read_traces(tmp.path()).unwrap();
        assert_eq!(back.len(), 3);
        for ((j, header, trace), original) in back.iter().zip(&outcome.traces) {
            assert_eq!(header.config_hash, cfg.config_hash());
            assert_eq!(header.seed, split_seed(11, *j as u64, "optimizer"));
            assert_eq!(trace.rows.len(), original.rows.len());
            assert_eq!(trace.final_theta, original.final_theta);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path(), "sdqo-crn", "case2");
        let instance = Instance::build(&cfg).unwrap();
        let sequential: Vec<_> = (0..cfg.runs).map(|j| run_once(&cfg, &instance, j).unwrap()).collect();
        let parallel = run_replications(&cfg).unwrap();
        for (s, p) in sequential.iter().zip(&parallel) {
            assert_eq!(s.final_theta, p.final_theta);
            assert_eq!(s.final_q, p.final_q);
        }
    }

    #[test]
    fn queue_runs_report_cost() {
        let tmp = tempfile::tempdir().unwrap();
        let text = format!(
            r#"{{"problem":"mm1","algorithm":"qg","phi":0.5,"eval_budget":1800,"runs":2,
                "output_dir":{:?}}}"#,
            tmp.path().to_str().unwrap()
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let outcome = run_experiment(&cfg).unwrap();
        let instance = Instance::build(&cfg).unwrap();
        let Instance::Queue(q) = &instance else { panic!("expected the queue") };
        for t in &outcome.traces {
            assert_eq!(t.iterations, 8);
            let cost = q.true_cost(&t.final_theta, 0.5).unwrap();
            assert!((t.final_true.unwrap() - cost).abs() < 1e-12);
        }
        let optimum = outcome.report.optimum.unwrap();
        assert!((optimum - 0.62).abs() < 0.01, "{optimum}");
    }
}
