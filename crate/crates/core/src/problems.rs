//! Noisy black-box benchmark problems.
//!
//! Each problem exposes a sampler `Y(θ)` driven by an explicit random
//! stream, so that two calls given identical copies of a stream consume
//! the same input uniforms (common random numbers). All input uniforms are
//! pushed through inverse CDFs, which keeps every output monotone in each
//! input uniform.

use std::f64::consts::{E, PI};
use std::fmt;

use rand::distr::Open01;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::optimizers::{FeasibleBox, QuadraticPenalty};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("quantile level {0} must lie in (0,1)")]
    QuantileLevel(f64),
    #[error("unknown case id {0} (expected 1..=6)")]
    UnknownCase(u8),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unstable queue at theta={theta:?}: service rate must exceed arrival rate")]
    UnstableQueue { theta: Vec<f64> },
    #[error("invalid queue configuration: {0}")]
    InvalidQueue(String),
}

/// A simulation oracle `Y(θ)` over a hyper-rectangle.
pub trait BlackBox: Send + Sync {
    fn label(&self) -> String;

    fn dim(&self) -> usize;

    fn bounds(&self) -> &FeasibleBox;

    /// Draws one output at `theta`, consuming input uniforms from `stream`.
    fn sample(&self, theta: &[f64], stream: &mut dyn RngCore) -> Result<f64, ProblemError>;

    /// Exact `φ`-quantile of `Y(θ)`, when known in closed form.
    fn true_quantile(&self, _theta: &[f64], _phi: f64) -> Option<f64> {
        None
    }
}

/// Distribution of the input noise `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Normal,
    Cauchy,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 2] = [NoiseKind::Normal, NoiseKind::Cauchy];

    /// Inverse CDF of the standard law.
    pub fn inverse_cdf(self, u: f64) -> f64 {
        match self {
            NoiseKind::Normal => standard_normal().inverse_cdf(u),
            NoiseKind::Cauchy => (PI * (u - 0.5)).tan(),
        }
    }

    pub fn density(self, x: f64) -> f64 {
        match self {
            NoiseKind::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            NoiseKind::Cauchy => 1.0 / (PI * (1.0 + x * x)),
        }
    }

    pub fn draw(self, stream: &mut dyn RngCore) -> f64 {
        self.inverse_cdf(uniform_open(stream))
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Normal => "normal",
            NoiseKind::Cauchy => "cauchy",
        })
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

/// A uniform draw on the open interval (0, 1).
pub fn uniform_open(stream: &mut dyn RngCore) -> f64 {
    stream.sample(Open01)
}

/// `F_X⁻¹(φ)` of the standard noise law.
pub fn noise_quantile(kind: NoiseKind, phi: f64) -> Result<f64, ProblemError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(ProblemError::QuantileLevel(phi));
    }
    Ok(kind.inverse_cdf(phi))
}

/// Published optimal quantile values for the six cases, indexed
/// `[case - 1][normal 0.6, normal 0.95, cauchy 0.6, cauchy 0.95]`.
pub const REFERENCE_OPTIMA: [[f64; 4]; 6] = [
    [10.0, 10.0, 10.0, 10.0],
    [0.25, 1.64, 0.32, 6.31],
    [-717.25, -715.86, -717.18, -711.19],
    [-49.29, -45.32, -49.08, -34.62],
    [0.25, 1.64, 0.32, 6.31],
    [0.25, 1.64, 0.32, 6.31],
];

/// The quantile levels the benchmark suite is run at.
pub const BENCHMARK_LEVELS: [f64; 2] = [0.6, 0.95];

/// Looks up a [`REFERENCE_OPTIMA`] entry.
pub fn reference_optimum(case: u8, noise: NoiseKind, phi: f64) -> Option<f64> {
    let col = match (noise, phi) {
        (NoiseKind::Normal, p) if p == 0.6 => 0,
        (NoiseKind::Normal, p) if p == 0.95 => 1,
        (NoiseKind::Cauchy, p) if p == 0.6 => 2,
        (NoiseKind::Cauchy, p) if p == 0.95 => 3,
        _ => return None,
    };
    let row = usize::from(case).checked_sub(1)?;
    REFERENCE_OPTIMA.get(row).map(|r| r[col])
}

/// One of the six synthetic benchmark functions.
///
/// Every case has the shape `Y(θ) = scale(θ)·X + shift(θ)` with
/// `scale ≥ 0`, so `q_φ(θ) = scale(θ)·z_φ + shift(θ)`.
#[derive(Debug, Clone)]
pub struct TestCase {
    id: u8,
    noise: NoiseKind,
    bounds: FeasibleBox,
}

impl TestCase {
    pub fn new(id: u8, noise: NoiseKind) -> Result<Self, ProblemError> {
        let bounds = match id {
            1 => FeasibleBox::cube(2, -2.0, 2.0),
            2 => {
                let lower = (0..10).map(|i| i as f64).collect();
                let upper = (0..10).map(|i| i as f64 + 2.0).collect();
                FeasibleBox::new(lower, upper).expect("case 2 box is well formed")
            }
            3 => FeasibleBox::cube(20, -20.0, 20.0),
            4 => FeasibleBox::cube(20, 1.0, 4.0),
            5 => FeasibleBox::cube(5, -5.0, 5.0),
            6 => FeasibleBox::cube(5, -10.0, 10.0),
            other => return Err(ProblemError::UnknownCase(other)),
        };
        Ok(Self { id, noise, bounds })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    /// Returns `(scale, shift)` at `theta`.
    pub fn components(&self, theta: &[f64]) -> (f64, f64) {
        let d = theta.len() as f64;
        match self.id {
            1 => {
                let (t1, t2) = (theta[0], theta[1]);
                (2.6 * (t1 * t1 + t2 * t2) - 4.8 * t1 * t2, 10.0)
            }
            2 => {
                let s: f64 = theta
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t - (i + 1) as f64).powi(2))
                    .sum();
                (s + 1.0, 0.0)
            }
            3 => {
                let h: f64 = theta
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t - (i + 1) as f64) * t)
                    .sum();
                (1.0, h)
            }
            4 => {
                let s: f64 = theta.iter().map(|t| (t - 1.0).powi(2)).sum::<f64>() / d;
                let h: f64 = theta
                    .iter()
                    .map(|t| t.powi(4) - 16.0 * t * t + 5.0 * t)
                    .sum::<f64>()
                    / d;
                (s, h)
            }
            5 => {
                let rms = (theta.iter().map(|t| t * t).sum::<f64>() / d).sqrt();
                let cos_mean = theta.iter().map(|t| (PI * t).cos()).sum::<f64>() / d;
                (-10.0 * (-0.2 * rms).exp() - cos_mean.exp() + 11.0 + E, 0.0)
            }
            6 => {
                let h = theta
                    .iter()
                    .map(|t| {
                        let u = t - 0.9;
                        0.4 * (0.2 * PI * u).sin().powi(2)
                            + 0.3 * (0.4 * PI * u).sin().powi(2)
                            + 0.001 * u * u
                    })
                    .sum::<f64>()
                    / d;
                (1.0, h)
            }
            _ => unreachable!("case id validated at construction"),
        }
    }

    /// A minimizer of `q_φ` and the optimal value.
    ///
    /// Case 1 is minimized anywhere on the diagonal; `(0, 0)` is reported.
    /// Case 4 is separable, so each coordinate is minimized on its own.
    pub fn optimum(&self, phi: f64) -> Result<(Vec<f64>, f64), ProblemError> {
        let z = noise_quantile(self.noise, phi)?;
        let theta: Vec<f64> = match self.id {
            1 => vec![0.0, 0.0],
            2 => (1..=10).map(|i| i as f64).collect(),
            3 => (1..=20).map(|i| i as f64 / 2.0).collect(),
            4 => vec![case4_coordinate_minimizer(z); 20],
            5 => vec![0.0; 5],
            6 => vec![0.9; 5],
            _ => unreachable!("case id validated at construction"),
        };
        let (scale, shift) = self.components(&theta);
        Ok((theta, scale * z + shift))
    }
}

/// Minimizes `z (t-1)² + t⁴ - 16t² + 5t` over `t ∈ [1, 4]`: a dense grid
/// scan followed by safeguarded Newton polishing.
fn case4_coordinate_minimizer(z: f64) -> f64 {
    let f = |t: f64| z * (t - 1.0).powi(2) + t.powi(4) - 16.0 * t * t + 5.0 * t;
    let df = |t: f64| 2.0 * z * (t - 1.0) + 4.0 * t.powi(3) - 32.0 * t + 5.0;
    let ddf = |t: f64| 2.0 * z + 12.0 * t * t - 32.0;
    let (lo, hi) = (1.0, 4.0);
    let steps = 30_000;
    let h = (hi - lo) / steps as f64;
    let mut best = lo;
    for i in 0..=steps {
        let t = lo + i as f64 * h;
        if f(t) < f(best) {
            best = t;
        }
    }
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let mut t = best;
    for _ in 0..60 {
        let curvature = ddf(t);
        let next = if curvature > 0.0 { t - df(t) / curvature } else { f64::NAN };
        if next.is_finite() && next > a && next < b {
            t = next;
        } else {
            t = 0.5 * (a + b);
        }
        if df(t) > 0.0 {
            b = t;
        } else {
            a = t;
        }
        if (b - a) < 1e-14 {
            break;
        }
    }
    [lo, hi, t].into_iter().fold(t, |acc, x| if f(x) < f(acc) { x } else { acc })
}

impl BlackBox for TestCase {
    fn label(&self) -> String {
        format!("case{}_{}", self.id, self.noise)
    }

    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &FeasibleBox {
        &self.bounds
    }

    fn sample(&self, theta: &[f64], stream: &mut dyn RngCore) -> Result<f64, ProblemError> {
        check_dim(self.dim(), theta)?;
        let (scale, shift) = self.components(theta);
        Ok(scale * self.noise.draw(stream) + shift)
    }

    fn true_quantile(&self, theta: &[f64], phi: f64) -> Option<f64> {
        if theta.len() != self.dim() {
            return None;
        }
        let z = noise_quantile(self.noise, phi).ok()?;
        let (scale, shift) = self.components(theta);
        Some(scale * z + shift)
    }
}

fn check_dim(expected: usize, theta: &[f64]) -> Result<(), ProblemError> {
    if theta.len() != expected {
        return Err(ProblemError::Dimension { expected, got: theta.len() });
    }
    Ok(())
}

/// Parameters of the single-server queue with service rate
/// `μ(θ) = 1/(vᵀθ) + λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mm1Config {
    pub lambda: f64,
    pub v: Vec<f64>,
    /// Index of the customer whose sojourn time is reported.
    pub warmup_customer: u32,
    pub penalty: QuadraticPenalty,
}

impl Default for Mm1Config {
    fn default() -> Self {
        #[rustfmt::skip]
        let a = vec![
            10.0, 2.0, 1.0, 2.0,
            2.0, 9.0, 2.0, 4.0,
            1.0, 2.0, 8.0, 0.0,
            2.0, 4.0, 0.0, 7.0,
        ];
        Self {
            lambda: 1.0,
            v: vec![0.1, 0.2, 0.3, 0.4],
            warmup_customer: 1000,
            penalty: QuadraticPenalty::new(0.1, 0.02, a, vec![7.0, 8.0, 9.0, 10.0])
                .expect("default penalty is positive definite"),
        }
    }
}

impl Mm1Config {
    pub fn load(&self, theta: &[f64]) -> f64 {
        self.v.iter().zip(theta).map(|(v, t)| v * t).sum()
    }

    pub fn service_rate(&self, theta: &[f64]) -> Result<f64, ProblemError> {
        let load = self.load(theta);
        if !(load > 0.0) || !load.is_finite() {
            return Err(ProblemError::UnstableQueue { theta: theta.to_vec() });
        }
        Ok(1.0 / load + self.lambda)
    }
}

/// Sojourn time of customer `warmup_customer` in an M/M/1 FCFS queue that
/// starts empty, via `T₁ = S₁`, `T_{n+1} = max(0, T_n − A_{n+1}) + S_{n+1}`.
///
/// Each customer consumes two uniforms in fixed order (interarrival, then
/// service). Interarrival times are decreasing and service times increasing
/// in their uniforms, so the sojourn time is non-decreasing in every input.
pub fn mm1_sojourn_sample(
    cfg: &Mm1Config,
    theta: &[f64],
    stream: &mut dyn RngCore,
) -> Result<f64, ProblemError> {
    let mu = cfg.service_rate(theta)?;
    let mut sojourn = 0.0;
    for n in 0..cfg.warmup_customer.max(1) {
        let interarrival = -uniform_open(stream).ln() / cfg.lambda;
        let service = -(1.0 - uniform_open(stream)).ln() / mu;
        sojourn = if n == 0 {
            service
        } else {
            lindley_step(sojourn, interarrival, service)
        };
    }
    Ok(sojourn)
}

/// One step of the sojourn-time recursion.
pub fn lindley_step(previous: f64, interarrival: f64, service: f64) -> f64 {
    (previous - interarrival).max(0.0) + service
}

/// `−ln(1−φ)·vᵀθ`, the `φ`-quantile of the steady-state sojourn time.
pub fn mm1_true_quantile(cfg: &Mm1Config, theta: &[f64], phi: f64) -> Result<f64, ProblemError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(ProblemError::QuantileLevel(phi));
    }
    cfg.service_rate(theta)?;
    Ok(-(1.0 - phi).ln() * cfg.load(theta))
}

/// `c₁·q_φ(θ) + c₂·(θ−ϑ)ᵀA(θ−ϑ)` with the closed-form steady-state quantile.
pub fn mm1_true_cost(cfg: &Mm1Config, theta: &[f64], phi: f64) -> Result<f64, ProblemError> {
    let q = mm1_true_quantile(cfg, theta, phi)?;
    Ok(cfg.penalty.objective(q, theta))
}

/// Analytic gradient of [`mm1_true_cost`].
pub fn mm1_cost_gradient(cfg: &Mm1Config, theta: &[f64], phi: f64) -> Vec<f64> {
    let slope = -cfg.penalty.c1 * (1.0 - phi).ln();
    let quad = cfg.penalty.gradient(theta);
    cfg.v.iter().zip(quad).map(|(v, g)| slope * v + g).collect()
}

/// Minimizer `θ* = ϑ + (c₁/2c₂)·ln(1−φ)·A⁻¹v` and its cost. A minimizer
/// outside `bounds` is clamped, and the returned flag is `true`.
pub fn mm1_optimum(
    cfg: &Mm1Config,
    bounds: &FeasibleBox,
    phi: f64,
) -> Result<(Vec<f64>, f64, bool), ProblemError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(ProblemError::QuantileLevel(phi));
    }
    let p = &cfg.penalty;
    let x = p.solve(&cfg.v);
    let factor = p.c1 / (2.0 * p.c2) * (1.0 - phi).ln();
    let raw: Vec<f64> = p.vartheta.iter().zip(&x).map(|(t, x)| t + factor * x).collect();
    let clamped = bounds.project(&raw);
    let was_clamped = clamped != raw;
    let cost = mm1_true_cost(cfg, &clamped, phi)?;
    Ok((clamped, cost, was_clamped))
}

/// The queueing example as a black box.
#[derive(Debug, Clone)]
pub struct Mm1Problem {
    cfg: Mm1Config,
    bounds: FeasibleBox,
}

impl Mm1Problem {
    /// Rejects configurations whose queue could become unstable anywhere in
    /// the open box `bounds` inflated by `margin` in every coordinate.
    pub fn new(cfg: Mm1Config, bounds: FeasibleBox, margin: f64) -> Result<Self, ProblemError> {
        let d = cfg.v.len();
        if d == 0 || bounds.dim() != d || cfg.penalty.dim() != d {
            return Err(ProblemError::InvalidQueue(format!(
                "v, box and penalty dimensions disagree ({d}, {}, {})",
                bounds.dim(),
                cfg.penalty.dim()
            )));
        }
        if cfg.v.iter().any(|v| !(*v > 0.0)) {
            return Err(ProblemError::InvalidQueue("v must be strictly positive".into()));
        }
        if !(cfg.lambda > 0.0) {
            return Err(ProblemError::InvalidQueue("lambda must be positive".into()));
        }
        if cfg.warmup_customer == 0 {
            return Err(ProblemError::InvalidQueue("warmup must be positive".into()));
        }
        // vᵀθ is smallest at the lower corner since v > 0.
        let corner: Vec<f64> = bounds.lower().iter().map(|l| l - margin).collect();
        if !(cfg.load(&corner) >= 0.0) {
            return Err(ProblemError::UnstableQueue { theta: corner });
        }
        Ok(Self { cfg, bounds })
    }

    /// The queueing example on `[1, 20]⁴`, safe for perturbations up to 1.
    pub fn standard() -> Self {
        Self::new(Mm1Config::default(), FeasibleBox::cube(4, 1.0, 20.0), 1.0)
            .expect("standard queue is stable")
    }

    pub fn config(&self) -> &Mm1Config {
        &self.cfg
    }

    pub fn penalty(&self) -> &QuadraticPenalty {
        &self.cfg.penalty
    }

    pub fn true_cost(&self, theta: &[f64], phi: f64) -> Result<f64, ProblemError> {
        mm1_true_cost(&self.cfg, theta, phi)
    }

    pub fn optimum(&self, phi: f64) -> Result<(Vec<f64>, f64, bool), ProblemError> {
        mm1_optimum(&self.cfg, &self.bounds, phi)
    }
}

impl BlackBox for Mm1Problem {
    fn label(&self) -> String {
        "mm1".to_string()
    }

    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &FeasibleBox {
        &self.bounds
    }

    fn sample(&self, theta: &[f64], stream: &mut dyn RngCore) -> Result<f64, ProblemError> {
        check_dim(self.dim(), theta)?;
        mm1_sojourn_sample(&self.cfg, theta, stream)
    }

    fn true_quantile(&self, theta: &[f64], phi: f64) -> Option<f64> {
        mm1_true_quantile(&self.cfg, theta, phi).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mc_quantile(problem: &dyn BlackBox, theta: &[f64], phi: f64, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys: Vec<f64> = (0..n).map(|_| problem.sample(theta, &mut rng).unwrap()).collect();
        ys.sort_by(f64::total_cmp);
        ys[((n as f64 * phi).ceil() as usize).saturating_sub(1)]
    }

    #[test]
    fn noise_quantile_values() {
        assert!((noise_quantile(NoiseKind::Normal, 0.95).unwrap() - 1.6449).abs() < 1e-4);
        assert!((noise_quantile(NoiseKind::Cauchy, 0.95).unwrap() - 6.3138).abs() < 1e-4);
        assert!(noise_quantile(NoiseKind::Cauchy, 0.5).unwrap().abs() < 1e-15);
        assert_eq!(
            noise_quantile(NoiseKind::Normal, 1.0),
            Err(ProblemError::QuantileLevel(1.0))
        );
        assert!(noise_quantile(NoiseKind::Cauchy, 0.0).is_err());
    }

    #[test]
    fn unknown_case_rejected() {
        assert_eq!(
            TestCase::new(7, NoiseKind::Normal).unwrap_err(),
            ProblemError::UnknownCase(7)
        );
        assert!(TestCase::new(0, NoiseKind::Normal).is_err());
    }

    #[test]
    fn case_dimensions_and_boxes() {
        let dims: Vec<usize> = (1..=6)
            .map(|id| TestCase::new(id, NoiseKind::Normal).unwrap().dim())
            .collect();
        assert_eq!(dims, vec![2, 10, 20, 20, 5, 5]);
        let c2 = TestCase::new(2, NoiseKind::Normal).unwrap();
        assert_eq!(c2.bounds().lower()[3], 3.0);
        assert_eq!(c2.bounds().upper()[3], 5.0);
    }

    #[test]
    fn case2_at_optimum() {
        let c = TestCase::new(2, NoiseKind::Normal).unwrap();
        let theta: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(c.components(&theta).0, 1.0);
        assert!((c.true_quantile(&theta, 0.95).unwrap() - 1.6449).abs() < 1e-4);
    }

    #[test]
    fn case3_deterministic_part() {
        let c = TestCase::new(3, NoiseKind::Normal).unwrap();
        let theta: Vec<f64> = (1..=20).map(|i| i as f64 / 2.0).collect();
        assert!((c.components(&theta).1 + 717.5).abs() < 1e-9);
        assert!((c.true_quantile(&theta, 0.6).unwrap() + 717.2467).abs() < 1e-4);
    }

    #[test]
    fn case1_closed_form_matches_monte_carlo() {
        let c = TestCase::new(1, NoiseKind::Normal).unwrap();
        let theta = [1.0, 1.0];
        let q = c.true_quantile(&theta, 0.95).unwrap();
        assert!((c.components(&theta).0 - 0.4).abs() < 1e-12);
        assert!((q - (10.0 + 0.4 * 1.644854)).abs() < 1e-5);
        let mc = mc_quantile(&c, &theta, 0.95, 1_000_000, 11);
        assert!((mc - q).abs() < 0.01, "mc={mc} q={q}");
    }

    #[test]
    fn case_optima_match_reference_values() {
        let c6 = TestCase::new(6, NoiseKind::Normal).unwrap();
        let (theta, q) = c6.optimum(0.6).unwrap();
        assert_eq!(theta, vec![0.9; 5]);
        assert!((q - 0.25).abs() < 0.01);

        let c4 = TestCase::new(4, NoiseKind::Normal).unwrap();
        assert!((c4.optimum(0.95).unwrap().1 + 45.32).abs() < 0.05);

        let c5 = TestCase::new(5, NoiseKind::Cauchy).unwrap();
        let (theta, q) = c5.optimum(0.6).unwrap();
        assert_eq!(theta, vec![0.0; 5]);
        assert!((c5.components(&theta).0 - 1.0).abs() < 1e-12);
        assert!((q - 0.32).abs() < 0.01);
    }

    #[test]
    fn case5_bracket_never_below_one() {
        let c = TestCase::new(5, NoiseKind::Normal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let theta = c.bounds().sample_uniform(&mut rng);
            assert!(c.components(&theta).0 >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn case1_scale_nonnegative() {
        let c = TestCase::new(1, NoiseKind::Normal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let t = c.bounds().sample_uniform(&mut rng);
            let norm2 = t[0] * t[0] + t[1] * t[1];
            let s = c.components(&t).0;
            assert!(s >= 0.2 * norm2 - 1e-12);
        }
    }

    #[test]
    fn case4_minimizer_is_stationary() {
        for z in [0.2533, 1.6449, 0.3249, 6.3138] {
            let t = case4_coordinate_minimizer(z);
            let df = 2.0 * z * (t - 1.0) + 4.0 * t.powi(3) - 32.0 * t + 5.0;
            assert!(df.abs() < 1e-9, "z={z} t={t} df={df}");
        }
    }

    #[test]
    fn lindley_two_customers() {
        assert_eq!(lindley_step(1.0, 0.5, 1.0), 1.5);
        assert_eq!(lindley_step(0.2, 0.5, 1.0), 1.0);
    }

    #[test]
    fn first_customer_only_waits_for_service() {
        let cfg = Mm1Config { warmup_customer: 1, ..Mm1Config::default() };
        let theta = [7.0, 8.0, 9.0, 10.0];
        let mu = cfg.service_rate(&theta).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = a.clone();
        let t1 = mm1_sojourn_sample(&cfg, &theta, &mut a).unwrap();
        let _interarrival = uniform_open(&mut b);
        let service = -(1.0 - uniform_open(&mut b)).ln() / mu;
        assert_eq!(t1, service);
    }

    #[test]
    fn sojourn_median_matches_exponential_law() {
        let problem = Mm1Problem::standard();
        let theta = [7.0, 8.0, 9.0, 10.0];
        let median = mc_quantile(&problem, &theta, 0.5, 100_000, 21);
        assert!((median - 2f64.ln() * 9.0).abs() < 0.1, "median={median}");
    }

    #[test]
    fn sojourn_is_monotone_in_service_level() {
        let problem = Mm1Problem::standard();
        let low = [5.0, 5.0, 5.0, 5.0];
        let high = [6.0, 6.0, 6.0, 6.0];
        for seed in 0..50 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = a.clone();
            let y_low = problem.sample(&low, &mut a).unwrap();
            let y_high = problem.sample(&high, &mut b).unwrap();
            assert!(y_low <= y_high);
        }
    }

    #[test]
    fn unstable_queue_rejected() {
        let cfg = Mm1Config::default();
        assert!(matches!(
            mm1_sojourn_sample(&cfg, &[0.0; 4], &mut ChaCha8Rng::seed_from_u64(0)),
            Err(ProblemError::UnstableQueue { .. })
        ));
        assert!(Mm1Problem::new(cfg, FeasibleBox::cube(4, 1.0, 20.0), 20.0).is_err());
    }

    #[test]
    fn true_cost_at_nominal_point() {
        let cfg = Mm1Config::default();
        let cost = mm1_true_cost(&cfg, &[7.0, 8.0, 9.0, 10.0], 0.5).unwrap();
        assert!((cost - 0.1 * 2f64.ln() * 9.0).abs() < 1e-12);
        assert!((cost - 0.6238).abs() < 1e-4);
    }

    #[test]
    fn pure_penalty_minimized_at_nominal() {
        let mut cfg = Mm1Config::default();
        cfg.penalty.c1 = 0.0;
        assert_eq!(mm1_true_cost(&cfg, &[7.0, 8.0, 9.0, 10.0], 0.9).unwrap(), 0.0);
        let (theta, cost, clamped) =
            mm1_optimum(&cfg, &FeasibleBox::cube(4, 1.0, 20.0), 0.9).unwrap();
        assert!(!clamped);
        assert_eq!(theta, vec![7.0, 8.0, 9.0, 10.0]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn queue_optimum_costs() {
        let problem = Mm1Problem::standard();
        let (theta, cost, clamped) = problem.optimum(0.5).unwrap();
        assert!(!clamped);
        assert!((cost - 0.62).abs() < 0.005, "cost={cost}");
        let grad = mm1_cost_gradient(problem.config(), &theta, 0.5);
        assert!(grad.iter().all(|g| g.abs() < 1e-10));

        let (_, cost, _) = problem.optimum(0.95).unwrap();
        assert!((cost - 2.66).abs() < 0.005, "cost={cost}");
    }

    #[test]
    fn cost_gradient_matches_central_differences() {
        let problem = Mm1Problem::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let theta = problem.bounds().sample_uniform(&mut rng);
            let grad = mm1_cost_gradient(problem.config(), &theta, 0.95);
            for i in 0..4 {
                let h = 1e-5;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (problem.true_cost(&up, 0.95).unwrap()
                    - problem.true_cost(&dn, 0.95).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn sampler_is_defined_across_the_box() {
        let problem = Mm1Problem::standard();
        let lower = problem.bounds().lower().to_vec();
        assert!(problem.config().load(&lower) > 0.0);
        assert!(problem.sample(&lower, &mut ChaCha8Rng::seed_from_u64(1)).is_ok());
    }
}
