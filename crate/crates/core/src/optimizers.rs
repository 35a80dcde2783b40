//! Projected stochastic-approximation loops.
//!
//! [`run_spqo`] and [`run_sdqo`] advance the coupled iterate
//! `(θ_k, q_k, D_k)` one oracle budget slice at a time; [`run_qg`] is the
//! order-statistics baseline that re-estimates quantiles from scratch at
//! every iteration with growing samples.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    draw_direction, quantile_step, sd_gradient_step, sp_gradient_step, CrnMode, TrackerState,
    DEFAULT_Q_BOUNDS,
};
use crate::harness::trace::{RunTrace, TraceRow};
use crate::problems::{BlackBox, ProblemError};
use crate::schedules::{adaptive_perturbation, GainSchedule};
use crate::stats::order_statistic_quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("evaluation budget {budget} is below the {per_iter} evaluations one iteration needs")]
    BudgetTooSmall { budget: u64, per_iter: u64 },
    #[error("dimension mismatch: problem has {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("initial point lies outside the feasible box")]
    InfeasibleStart,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("iterate became non-finite at iteration {0}")]
    Diverged(u64),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// A hyper-rectangle `{θ : lower ≤ θ ≤ upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeasibleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(OptimError::InvalidBox(format!(
                "bound lengths {} and {} must agree and be nonzero",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len())
            .find(|&i| !(lower[i] < upper[i] && lower[i].is_finite() && upper[i].is_finite()))
        {
            return Err(OptimError::InvalidBox(format!(
                "coordinate {i}: need finite lower < upper, got [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim]).expect("cube bounds must satisfy lo < hi")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    /// Euclidean projection, which for a box is coordinatewise clamping.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| t.max(*lo).min(*hi))
            .collect()
    }

    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Whether every coordinate shares the same bounds.
    pub fn uniform_bounds(&self) -> Option<(f64, f64)> {
        let (lo, hi) = (self.lower[0], self.upper[0]);
        (self.lower.iter().all(|l| *l == lo) && self.upper.iter().all(|u| *u == hi))
            .then_some((lo, hi))
    }
}

/// The cost `c₁·q + c₂·(θ−ϑ)ᵀA(θ−ϑ)` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPenalty {
    pub c1: f64,
    pub c2: f64,
    matrix: Vec<f64>,
    pub vartheta: Vec<f64>,
}

impl QuadraticPenalty {
    /// `matrix` is row-major `d×d`.
    pub fn new(c1: f64, c2: f64, matrix: Vec<f64>, vartheta: Vec<f64>) -> Result<Self, OptimError> {
        let d = vartheta.len();
        if !(c1 >= 0.0 && c2 >= 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(OptimError::InvalidPenalty(format!(
                "cost weights must be finite and nonnegative (c1={c1}, c2={c2})"
            )));
        }
        if d == 0 || matrix.len() != d * d {
            return Err(OptimError::InvalidPenalty(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                d * d
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (matrix[i * d + j] - matrix[j * d + i]).abs() > 1e-12 {
                    return Err(OptimError::InvalidPenalty(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if DMatrix::from_row_slice(d, d, &matrix).cholesky().is_none() {
            return Err(OptimError::InvalidPenalty("matrix is not positive definite".into()));
        }
        Ok(Self { c1, c2, matrix, vartheta })
    }

    pub fn dim(&self) -> usize {
        self.vartheta.len()
    }

    /// Row-major entries of `A`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    fn a_times(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum())
            .collect()
    }

    fn offset(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.vartheta).map(|(t, v)| t - v).collect()
    }

    /// `c₂·(θ−ϑ)ᵀA(θ−ϑ)`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        let u = self.offset(theta);
        self.c2 * u.iter().zip(self.a_times(&u)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `2c₂·A(θ−ϑ)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.a_times(&self.offset(theta))
            .into_iter()
            .map(|x| 2.0 * self.c2 * x)
            .collect()
    }

    pub fn objective(&self, quantile: f64, theta: &[f64]) -> f64 {
        self.c1 * quantile + self.value(theta)
    }

    /// `c₁·D + 2c₂·A(θ−ϑ)`.
    pub fn descent_direction(&self, quantile_gradient: &[f64], theta: &[f64]) -> Vec<f64> {
        quantile_gradient
            .iter()
            .zip(self.gradient(theta))
            .map(|(d, g)| self.c1 * d + g)
            .collect()
    }

    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let chol = DMatrix::from_row_slice(d, d, &self.matrix)
            .cholesky()
            .expect("validated positive definite at construction");
        chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect()
    }
}

/// Parameters of the order-statistics baseline:
/// `ρ_k = rho0/k`, `υ_k = 1/k^upsilon_exp`, `n_k = ⌈k^sample_exp⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QgConfig {
    pub rho0: f64,
    pub upsilon_exp: f64,
    pub sample_exp: f64,
}

impl Default for QgConfig {
    fn default() -> Self {
        Self { rho0: 1.0, upsilon_exp: 0.501, sample_exp: 2.003 }
    }
}

impl QgConfig {
    pub fn step(&self, k: u64) -> f64 {
        self.rho0 / k as f64
    }

    pub fn perturbation(&self, k: u64) -> f64 {
        1.0 / (k as f64).powf(self.upsilon_exp)
    }

    pub fn sample_size(&self, k: u64) -> u64 {
        ((k as f64).powf(self.sample_exp).ceil() as u64).max(1)
    }

    /// Oracle calls one iteration consumes in dimension `dim`.
    pub fn evals_at(&self, k: u64, dim: usize) -> u64 {
        2 * dim as u64 * self.sample_size(k)
    }
}

/// Settings shared by the tracking optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSettings {
    pub phi: f64,
    pub eval_budget: u64,
    pub crn: CrnMode,
    /// Record every `trace_stride`-th iteration (the last one is always kept).
    pub trace_stride: u64,
    /// Truncation interval for `q_k`.
    pub q_bounds: (f64, f64),
}

impl TrackingSettings {
    pub fn new(phi: f64, eval_budget: u64, crn: CrnMode) -> Self {
        Self { phi, eval_budget, crn, trace_stride: 1, q_bounds: DEFAULT_Q_BOUNDS }
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.trace_stride = stride.max(1);
        self
    }
}

/// How the gradient tracker perturbs `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScheme {
    /// One random `±1` direction: 2 oracle calls.
    Simultaneous,
    /// Every coordinate in turn: `2d` oracle calls.
    Coordinatewise,
}

impl GradientScheme {
    /// Oracle calls per iteration, counting the quantile-step sample.
    pub fn evals_per_iter(self, dim: usize) -> u64 {
        match self {
            GradientScheme::Simultaneous => 3,
            GradientScheme::Coordinatewise => 2 * dim as u64 + 1,
        }
    }
}

/// SPQO: simultaneous-perturbation quantile optimization.
pub fn run_spqo(
    problem: &dyn BlackBox,
    schedule: &GainSchedule,
    settings: &TrackingSettings,
    init: &TrackerState,
    seed: u64,
) -> Result<RunTrace, OptimError> {
    run_tracking(problem, GradientScheme::Simultaneous, schedule, settings, init, seed, None)
}

/// SDQO: coordinatewise symmetric-difference quantile optimization.
pub fn run_sdqo(
    problem: &dyn BlackBox,
    schedule: &GainSchedule,
    settings: &TrackingSettings,
    init: &TrackerState,
    seed: u64,
) -> Result<RunTrace, OptimError> {
    run_tracking(problem, GradientScheme::Coordinatewise, schedule, settings, init, seed, None)
}

/// SPQO minimizing `c₁·q_φ(θ) + c₂·(θ−ϑ)ᵀA(θ−ϑ)`: only the parameter
/// step changes, descending along `c₁·D_k + 2c₂·A(θ_k−ϑ)`.
pub fn run_spqo_penalized(
    problem: &dyn BlackBox,
    penalty: &QuadraticPenalty,
    schedule: &GainSchedule,
    settings: &TrackingSettings,
    init: &TrackerState,
    seed: u64,
) -> Result<RunTrace, OptimError> {
    run_tracking(
        problem,
        GradientScheme::Simultaneous,
        schedule,
        settings,
        init,
        seed,
        Some(penalty),
    )
}

/// SDQO counterpart of [`run_spqo_penalized`].
pub fn run_sdqo_penalized(
    problem: &dyn BlackBox,
    penalty: &QuadraticPenalty,
    schedule: &GainSchedule,
    settings: &TrackingSettings,
    init: &TrackerState,
    seed: u64,
) -> Result<RunTrace, OptimError> {
    run_tracking(
        problem,
        GradientScheme::Coordinatewise,
        schedule,
        settings,
        init,
        seed,
        Some(penalty),
    )
}

fn check_start(problem: &dyn BlackBox, theta: &[f64]) -> Result<(), OptimError> {
    if theta.len() != problem.dim() {
        return Err(OptimError::Dimension { expected: problem.dim(), got: theta.len() });
    }
    if !problem.bounds().contains(theta) {
        return Err(OptimError::InfeasibleStart);
    }
    Ok(())
}

fn true_value(
    problem: &dyn BlackBox,
    penalty: Option<&QuadraticPenalty>,
    theta: &[f64],
    phi: f64,
) -> Option<f64> {
    let q = problem.true_quantile(theta, phi)?;
    Some(match penalty {
        Some(p) => p.objective(q, theta),
        None => q,
    })
}

/// The shared three-timescale loop.
///
/// Within one iteration: shrink `c_k` by the current gradient norm, step
/// `q`, step `D` against the pre-update `q_k`, then move `θ` along the
/// pre-update `D_k` and project.
pub fn run_tracking(
    problem: &dyn BlackBox,
    scheme: GradientScheme,
    schedule: &GainSchedule,
    settings: &TrackingSettings,
    init: &TrackerState,
    seed: u64,
    penalty: Option<&QuadraticPenalty>,
) -> Result<RunTrace, OptimError> {
    let dim = problem.dim();
    check_start(problem, &init.theta)?;
    if init.grad.len() != dim {
        return Err(OptimError::Dimension { expected: dim, got: init.grad.len() });
    }
    if let Some(p) = penalty {
        if p.dim() != dim {
            return Err(OptimError::Dimension { expected: dim, got: p.dim() });
        }
    }
    let per_iter = scheme.evals_per_iter(dim);
    if settings.eval_budget < per_iter {
        return Err(OptimError::BudgetTooSmall { budget: settings.eval_budget, per_iter });
    }

    let stride = settings.trace_stride.max(1);
    let (q_lo, q_hi) = settings.q_bounds;
    let phi = settings.phi;
    let bounds = problem.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = TrackerState { k: 0, evals: 0, ..init.clone() };
    let mut trace = RunTrace::new(dim);
    let clock = Instant::now();

    while state.evals + per_iter <= settings.eval_budget {
        let k = state.k + 1;
        let gains = schedule.gains_at(k);
        let c_scaled = adaptive_perturbation(gains.c, &state.grad);

        let y = problem.sample(&state.theta, &mut rng)?;
        let q_next = quantile_step(state.q, gains.gamma, phi, y).clamp(q_lo, q_hi);

        let (grad_next, used) = match scheme {
            GradientScheme::Simultaneous => {
                let direction = draw_direction(&mut rng, dim);
                sp_gradient_step(&state, gains.beta, c_scaled, &direction, problem, settings.crn, &mut rng)?
            }
            GradientScheme::Coordinatewise => {
                sd_gradient_step(&state, gains.beta, c_scaled, problem, settings.crn, &mut rng)?
            }
        };

        let descent = match penalty {
            Some(p) => p.descent_direction(&state.grad, &state.theta),
            None => state.grad.clone(),
        };
        let stepped: Vec<f64> = state
            .theta
            .iter()
            .zip(&descent)
            .map(|(t, g)| t - gains.alpha * g)
            .collect();

        state = TrackerState {
            theta: bounds.project(&stepped),
            q: q_next,
            grad: grad_next,
            k,
            evals: state.evals + 1 + used,
        };
        if !state.is_finite() {
            return Err(OptimError::Diverged(k));
        }
        if k % stride == 0 {
            trace.push(row(&state.theta, Some(state.q), k, state.evals, problem, penalty, phi, &clock));
        }
    }

    if state.k % stride != 0 {
        trace.push(row(&state.theta, Some(state.q), state.k, state.evals, problem, penalty, phi, &clock));
    }
    let final_true = true_value(problem, penalty, &state.theta, phi);
    trace.finish(state.k, state.evals, state.theta, Some(state.q), final_true);
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn row(
    theta: &[f64],
    q: Option<f64>,
    k: u64,
    evals: u64,
    problem: &dyn BlackBox,
    penalty: Option<&QuadraticPenalty>,
    phi: f64,
    clock: &Instant,
) -> TraceRow {
    TraceRow {
        k,
        evals,
        theta: theta.to_vec(),
        q_estimate: q,
        true_value: true_value(problem, penalty, theta, phi),
        wall_nanos: clock.elapsed().as_nanos() as u64,
    }
}

/// The order-statistics quasi-gradient baseline.
pub fn run_qg(
    problem: &dyn BlackBox,
    cfg: &QgConfig,
    phi: f64,
    theta0: &[f64],
    eval_budget: u64,
    seed: u64,
    trace_stride: u64,
) -> Result<RunTrace, OptimError> {
    qg_loop(problem, cfg, phi, theta0, eval_budget, seed, trace_stride, None)
}

/// The baseline descending along `c₁·D̃_k + 2c₂·A(θ_k−ϑ)`.
#[allow(clippy::too_many_arguments)]
pub fn run_qg_penalized(
    problem: &dyn BlackBox,
    penalty: &QuadraticPenalty,
    cfg: &QgConfig,
    phi: f64,
    theta0: &[f64],
    eval_budget: u64,
    seed: u64,
    trace_stride: u64,
) -> Result<RunTrace, OptimError> {
    qg_loop(problem, cfg, phi, theta0, eval_budget, seed, trace_stride, Some(penalty))
}

/// `⌈nφ⌉`-th order statistic of `n` fresh outputs at `theta`.
fn sample_quantile(
    problem: &dyn BlackBox,
    theta: &[f64],
    n: u64,
    phi: f64,
    rng: &mut dyn RngCore,
    buf: &mut Vec<f64>,
) -> Result<f64, OptimError> {
    buf.clear();
    for _ in 0..n {
        buf.push(problem.sample(theta, rng)?);
    }
    Ok(order_statistic_quantile(buf, phi).expect("sample size is at least one"))
}

#[allow(clippy::too_many_arguments)]
fn qg_loop(
    problem: &dyn BlackBox,
    cfg: &QgConfig,
    phi: f64,
    theta0: &[f64],
    eval_budget: u64,
    seed: u64,
    trace_stride: u64,
    penalty: Option<&QuadraticPenalty>,
) -> Result<RunTrace, OptimError> {
    let dim = problem.dim();
    check_start(problem, theta0)?;
    if let Some(p) = penalty {
        if p.dim() != dim {
            return Err(OptimError::Dimension { expected: dim, got: p.dim() });
        }
    }
    let first = cfg.evals_at(1, dim);
    if eval_budget < first {
        return Err(OptimError::BudgetTooSmall { budget: eval_budget, per_iter: first });
    }

    let stride = trace_stride.max(1);
    let bounds = problem.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = theta0.to_vec();
    let mut evals = 0u64;
    let mut k = 0u64;
    let mut trace = RunTrace::new(dim);
    let mut buf = Vec::new();
    let clock = Instant::now();

    loop {
        let next_k = k + 1;
        let cost = cfg.evals_at(next_k, dim);
        if evals + cost > eval_budget {
            break;
        }
        k = next_k;
        let n = cfg.sample_size(k);
        let upsilon = cfg.perturbation(k);
        let mut gradient = vec![0.0; dim];
        for i in 0..dim {
            let mut point: Vec<f64> = theta
                .iter()
                .enumerate()
                .map(|(j, t)| if j == i { *t } else { t + upsilon * (2.0 * rng.random::<f64>() - 1.0) })
                .collect();
            point[i] = theta[i] + upsilon;
            let upper = sample_quantile(problem, &point, n, phi, &mut rng, &mut buf)?;
            point[i] = theta[i] - upsilon;
            let lower = sample_quantile(problem, &point, n, phi, &mut rng, &mut buf)?;
            gradient[i] = (upper - lower) / (2.0 * upsilon);
        }
        evals += cost;

        let descent = match penalty {
            Some(p) => p.descent_direction(&gradient, &theta),
            None => gradient,
        };
        let rho = cfg.step(k);
        let stepped: Vec<f64> = theta.iter().zip(&descent).map(|(t, g)| t - rho * g).collect();
        theta = bounds.project(&stepped);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(OptimError::Diverged(k));
        }
        if k % stride == 0 {
            trace.push(row(&theta, None, k, evals, problem, penalty, phi, &clock));
        }
    }

    if k % stride != 0 {
        trace.push(row(&theta, None, k, evals, problem, penalty, phi, &clock));
    }
    let final_true = true_value(problem, penalty, &theta, phi);
    trace.finish(k, evals, theta, None, final_true);
    Ok(trace)
}
