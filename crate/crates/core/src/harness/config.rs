//! Experiment configuration files.
//!
//! Configs are JSON objects. Unknown keys anywhere are rejected, optional
//! keys are filled from defaults, and everything is validated before a
//! single oracle call is made.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::optimizers::{FeasibleBox, GradientScheme, QgConfig, QuadraticPenalty};
use crate::problems::{BlackBox, Mm1Config, Mm1Problem, NoiseKind, TestCase};
use crate::schedules::{max_iterations, GainSchedule};

/// Rows recorded per run when `trace_stride` is left to its default.
pub const TARGET_TRACE_ROWS: u64 = 2000;
pub const DEFAULT_RUNS: usize = 40;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Spqo,
    SpqoCrn,
    Sdqo,
    SdqoCrn,
    Qg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Spqo, Algorithm::SpqoCrn, Algorithm::Sdqo, Algorithm::SdqoCrn, Algorithm::Qg];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Spqo => "spqo",
            Algorithm::SpqoCrn => "spqo-crn",
            Algorithm::Sdqo => "sdqo",
            Algorithm::SdqoCrn => "sdqo-crn",
            Algorithm::Qg => "qg",
        }
    }

    /// Gradient scheme of the tracking variants; `None` for the baseline.
    pub fn scheme(self) -> Option<GradientScheme> {
        match self {
            Algorithm::Spqo | Algorithm::SpqoCrn => Some(GradientScheme::Simultaneous),
            Algorithm::Sdqo | Algorithm::SdqoCrn => Some(GradientScheme::Coordinatewise),
            Algorithm::Qg => None,
        }
    }

    pub fn uses_crn(self) -> bool {
        matches!(self, Algorithm::SpqoCrn | Algorithm::SdqoCrn)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

/// Partial schedule: any field left out comes from the budget recipe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub a: Option<f64>,
    pub alpha: Option<f64>,
    pub b: Option<f64>,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub tau: Option<f64>,
    #[serde(rename = "shift_R")]
    pub shift_r: Option<u64>,
}

impl ScheduleOverrides {
    pub fn apply(&self, base: GainSchedule) -> GainSchedule {
        GainSchedule {
            a: self.a.unwrap_or(base.a),
            alpha: self.alpha.unwrap_or(base.alpha),
            b: self.b.unwrap_or(base.b),
            beta: self.beta.unwrap_or(base.beta),
            r: self.r.unwrap_or(base.r),
            gamma: self.gamma.unwrap_or(base.gamma),
            c: self.c.unwrap_or(base.c),
            tau: self.tau.unwrap_or(base.tau),
            shift_r: self.shift_r.unwrap_or(base.shift_r),
        }
    }
}

/// The `mm1` block. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueSettings {
    pub lambda: f64,
    pub v: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    /// Row-major `d×d` penalty matrix.
    #[serde(rename = "A")]
    pub matrix: Vec<f64>,
    pub vartheta: Vec<f64>,
    pub warmup: u32,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Default for QueueSettings {
    fn default() -> Self {
        let cfg = Mm1Config::default();
        let d = cfg.v.len();
        Self {
            lambda: cfg.lambda,
            v: cfg.v.clone(),
            c1: cfg.penalty.c1,
            c2: cfg.penalty.c2,
            matrix: cfg.penalty.matrix().to_vec(),
            vartheta: cfg.penalty.vartheta.clone(),
            warmup: cfg.warmup_customer,
            lower: vec![1.0; d],
            upper: vec![20.0; d],
        }
    }
}

impl QueueSettings {
    /// Builds the queue, checking stability on the box widened by `margin`.
    pub fn build(&self, margin: f64) -> Result<Mm1Problem, ConfigError> {
        let penalty = QuadraticPenalty::new(
            self.c1,
            self.c2,
            self.matrix.clone(),
            self.vartheta.clone(),
        )
        .map_err(|e| invalid("mm1", e.to_string()))?;
        let bounds = FeasibleBox::new(self.lower.clone(), self.upper.clone())
            .map_err(|e| invalid("mm1.lower/upper", e.to_string()))?;
        let cfg = Mm1Config {
            lambda: self.lambda,
            v: self.v.clone(),
            warmup_customer: self.warmup,
            penalty,
        };
        Mm1Problem::new(cfg, bounds, margin).map_err(|e| invalid("mm1", e.to_string()))
    }
}

/// The optimization problem an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemSpec {
    Case { id: u8, noise: NoiseKind },
    Mm1(QueueSettings),
}

impl ProblemSpec {
    pub fn label(&self) -> String {
        match self {
            ProblemSpec::Case { id, .. } => format!("case{id}"),
            ProblemSpec::Mm1(_) => "mm1".to_string(),
        }
    }

    pub fn noise(&self) -> Option<NoiseKind> {
        match self {
            ProblemSpec::Case { noise, .. } => Some(*noise),
            ProblemSpec::Mm1(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Case { id, noise } => {
                TestCase::new(*id, *noise).map(|c| c.dim()).unwrap_or(0)
            }
            ProblemSpec::Mm1(q) => q.v.len(),
        }
    }
}

/// On-disk form of a config, before defaults and validation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem: String,
    #[serde(default)]
    noise: Option<NoiseKind>,
    algorithm: Algorithm,
    phi: f64,
    eval_budget: u64,
    #[serde(default)]
    runs: Option<usize>,
    #[serde(default)]
    base_seed: Option<u64>,
    #[serde(default)]
    schedule: Option<ScheduleOverrides>,
    #[serde(default)]
    trace_stride: Option<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    mm1: Option<QueueSettings>,
    #[serde(default)]
    qg: Option<QgConfig>,
    #[serde(default)]
    q_bounds: Option<[f64; 2]>,
    #[serde(default)]
    theta0: Option<Vec<f64>>,
}

/// A validated experiment with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub phi: f64,
    pub eval_budget: u64,
    pub runs: usize,
    pub base_seed: u64,
    /// Resolved gains; unused by `qg`.
    pub schedule: GainSchedule,
    pub qg: QgConfig,
    pub trace_stride: u64,
    /// Oracle calls per iteration; `None` for `qg`, whose cost grows.
    pub evals_per_iter: Option<u64>,
    pub q_bounds: Option<[f64; 2]>,
    /// Fixed start; drawn uniformly from the box per run when absent.
    pub theta0: Option<Vec<f64>>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and validates JSON text.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: ConfigFile = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::resolve(raw)
    }

    fn resolve(raw: ConfigFile) -> Result<Self, ConfigError> {
        if !(raw.phi > 0.0 && raw.phi < 1.0) {
            return Err(invalid("phi", "phi must lie in (0,1)"));
        }
        if raw.eval_budget == 0 {
            return Err(invalid("eval_budget", "eval_budget must be positive"));
        }
        let runs = raw.runs.unwrap_or(DEFAULT_RUNS);
        if runs == 0 {
            return Err(invalid("runs", "runs must be positive"));
        }
        if raw.trace_stride == Some(0) {
            return Err(invalid("trace_stride", "trace_stride must be positive"));
        }

        let problem = match raw.problem.as_str() {
            "mm1" => {
                if raw.noise.is_some() {
                    return Err(invalid("noise", "the queue has no noise selector"));
                }
                ProblemSpec::Mm1(raw.mm1.clone().unwrap_or_default())
            }
            other => {
                if raw.mm1.is_some() {
                    return Err(invalid("mm1", "the mm1 block requires problem \"mm1\""));
                }
                let id = other
                    .strip_prefix("case")
                    .and_then(|n| n.parse::<u8>().ok())
                    .filter(|n| (1..=6).contains(n))
                    .ok_or_else(|| {
                        invalid("problem", format!("unknown problem {other:?} (case1..case6 or mm1)"))
                    })?;
                ProblemSpec::Case { id, noise: raw.noise.unwrap_or(NoiseKind::Normal) }
            }
        };
        let dim = problem.dim();

        let qg = raw.qg.unwrap_or_default();
        if !(qg.rho0 > 0.0 && qg.upsilon_exp > 0.0 && qg.sample_exp > 0.0) {
            return Err(invalid("qg", "rho0, upsilon_exp and sample_exp must be positive"));
        }

        let evals_per_iter = raw.algorithm.scheme().map(|s| s.evals_per_iter(dim));
        let (schedule, max_iter) = match evals_per_iter {
            Some(per_iter) => {
                let recipe = GainSchedule::recipe(raw.eval_budget, per_iter)
                    .map_err(|e| invalid("eval_budget", e.to_string()))?;
                let schedule = raw.schedule.unwrap_or_default().apply(recipe);
                schedule.validate().map_err(|e| invalid("schedule", e.to_string()))?;
                let max_iter = max_iterations(raw.eval_budget, per_iter)
                    .map_err(|e| invalid("eval_budget", e.to_string()))?;
                (schedule, max_iter)
            }
            None => {
                if raw.schedule.is_some() {
                    return Err(invalid("schedule", "qg does not use a gain schedule"));
                }
                let max_iter = qg_iterations(&qg, dim, raw.eval_budget);
                if max_iter == 0 {
                    return Err(invalid(
                        "eval_budget",
                        format!("budget {} cannot cover one qg iteration", raw.eval_budget),
                    ));
                }
                // Recorded for completeness; the baseline ignores it.
                let schedule = GainSchedule::recipe(raw.eval_budget, 1)
                    .map_err(|e| invalid("eval_budget", e.to_string()))?;
                (schedule, max_iter)
            }
        };
        let trace_stride = raw.trace_stride.unwrap_or((max_iter / TARGET_TRACE_ROWS).max(1));

        if let Some([lo, hi]) = raw.q_bounds {
            if !(lo < hi) {
                return Err(invalid("q_bounds", "q_bounds must satisfy lower < upper"));
            }
            if raw.algorithm == Algorithm::Qg {
                return Err(invalid("q_bounds", "qg keeps no running quantile"));
            }
        }

        let margin = match evals_per_iter {
            Some(_) => schedule.gains_at(1).c,
            None => qg.perturbation(1),
        };
        let built_bounds = match &problem {
            ProblemSpec::Mm1(q) => q.build(margin)?.bounds().clone(),
            ProblemSpec::Case { id, noise } => {
                let case = TestCase::new(*id, *noise).map_err(|e| invalid("problem", e.to_string()))?;
                case.bounds().clone()
            }
        };
        if let Some(theta0) = &raw.theta0 {
            if theta0.len() != dim {
                return Err(invalid("theta0", format!("expected {dim} coordinates, got {}", theta0.len())));
            }
            if !built_bounds.contains(theta0) {
                return Err(invalid("theta0", "theta0 lies outside the feasible box"));
            }
        }

        let mut cfg = Self {
            problem,
            algorithm: raw.algorithm,
            phi: raw.phi,
            eval_budget: raw.eval_budget,
            runs,
            base_seed: raw.base_seed.unwrap_or(0),
            schedule,
            qg,
            trace_stride,
            evals_per_iter,
            q_bounds: raw.q_bounds,
            theta0: raw.theta0,
            output_dir: PathBuf::new(),
        };
        cfg.output_dir = raw.output_dir.unwrap_or_else(|| Path::new("results").join(cfg.label()));
        Ok(cfg)
    }

    /// `case2_normal_spqo_phi0.95`, `mm1_qg_phi0.5`, …
    pub fn label(&self) -> String {
        let problem = match self.problem.noise() {
            Some(noise) => format!("{}_{noise}", self.problem.label()),
            None => self.problem.label(),
        };
        format!("{problem}_{}_phi{}", self.algorithm, self.phi)
    }

    /// Hex SHA-256 of the resolved config with `output_dir` left out, so
    /// that relocating results does not change it.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    ExperimentConfig::from_json(&text)
}

/// Whole baseline iterations that fit in `budget`.
pub fn qg_iterations(cfg: &QgConfig, dim: usize, budget: u64) -> u64 {
    let mut used = 0u64;
    let mut k = 0u64;
    loop {
        let next = cfg.evals_at(k + 1, dim);
        match used.checked_add(next) {
            Some(total) if total <= budget => {
                used = total;
                k += 1;
            }
            _ => return k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem":"case1","noise":"normal","algorithm":"spqo","phi":0.6,"eval_budget":30000}"#,
        )
        .unwrap();
        assert_eq!(cfg.runs, 40);
        assert_eq!(cfg.base_seed, 0);
        assert_eq!(cfg.evals_per_iter, Some(3));
        assert_eq!(cfg.schedule, GainSchedule::recipe(30_000, 3).unwrap());
        // 10⁴ iterations, 2000 rows.
        assert_eq!(cfg.trace_stride, 5);
        assert_eq!(cfg.label(), "case1_normal_spqo_phi0.6");
        assert_eq!(cfg.output_dir, Path::new("results/case1_normal_spqo_phi0.6"));
    }

    #[test]
    fn phi_out_of_range() {
        let err = ExperimentConfig::from_json(
            r#"{"problem":"case1","noise":"normal","algorithm":"spqo","phi":1.2,"eval_budget":30000}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("phi must lie in (0,1)"), "{err}");
    }

    #[test]
    fn sdqo_case3_uses_2d_plus_1() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem":"case3","noise":"normal","algorithm":"sdqo","phi":0.6,"eval_budget":300000}"#,
        )
        .unwrap();
        assert_eq!(cfg.evals_per_iter, Some(41));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"colour":1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        let err = ExperimentConfig::from_json(
            r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"schedule":{"zeta":1}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"problem\": \"case1\",\n  oops\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        let cases = [
            (r#"{"problem":"case9","algorithm":"spqo","phi":0.6,"eval_budget":300}"#, "problem"),
            (r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":2}"#, "eval_budget"),
            (r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"runs":0}"#, "runs"),
            (
                r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"trace_stride":0}"#,
                "trace_stride",
            ),
            (
                r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"theta0":[5,0]}"#,
                "theta0",
            ),
            (r#"{"problem":"mm1","noise":"normal","algorithm":"qg","phi":0.5,"eval_budget":1800}"#, "noise"),
            (
                r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":300,"schedule":{"alpha":1.5}}"#,
                "schedule",
            ),
            (
                r#"{"problem":"mm1","algorithm":"spqo","phi":0.5,"eval_budget":1800,"mm1":{"lower":[-9,1,1,1]}}"#,
                "mm1",
            ),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_json(text) {
                Err(ConfigError::Invalid { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn schedule_overrides_are_partial() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem":"case1","algorithm":"spqo","phi":0.6,"eval_budget":30000,"schedule":{"a":0.5}}"#,
        )
        .unwrap();
        let recipe = GainSchedule::recipe(30_000, 3).unwrap();
        assert_eq!(cfg.schedule, GainSchedule { a: 0.5, ..recipe });
    }

    #[test]
    fn queue_defaults_and_qg_stride() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem":"mm1","algorithm":"qg","phi":0.5,"eval_budget":1800}"#,
        )
        .unwrap();
        assert_eq!(cfg.problem, ProblemSpec::Mm1(QueueSettings::default()));
        assert_eq!(cfg.evals_per_iter, None);
        assert_eq!(cfg.trace_stride, 1);
        assert_eq!(qg_iterations(&cfg.qg, 4, 1800), 8);
        assert_eq!(cfg.label(), "mm1_qg_phi0.5");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let base = r#"{"problem":"case2","algorithm":"spqo","phi":0.95,"eval_budget":3000"#;
        let a = ExperimentConfig::from_json(&format!("{base},\"output_dir\":\"x\"}}")).unwrap();
        let b = ExperimentConfig::from_json(&format!("{base},\"output_dir\":\"y\"}}")).unwrap();
        let c = ExperimentConfig::from_json(&format!("{base},\"base_seed\":1}}")).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
    }
}
