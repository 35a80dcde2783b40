//! Coupled quantile and quantile-gradient trackers.
//!
//! The quantile tracker solves `E[I{Y(θ) ≤ q}] = φ` by stochastic
//! approximation. The gradient trackers solve the companion equation
//! `E[(−I{Y(θ+cΔ) ≤ q + c·DᵀΔ} + I{Y(θ−cΔ) ≤ q − c·DᵀΔ}) / (2cΔ)] = 0`
//! for `D`, whose root is `∇q_φ(θ)` once `q` has settled. Note that the
//! quantile estimate itself is perturbed, by an amount driven by `D`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problems::{BlackBox, ProblemError};

/// Default truncation interval for the quantile estimate.
pub const DEFAULT_Q_BOUNDS: (f64, f64) = (-1e9, 1e9);

/// Coupled iterate `(θ_k, q_k, D_k)` with its counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub theta: Vec<f64>,
    pub q: f64,
    pub grad: Vec<f64>,
    /// Completed iterations.
    pub k: u64,
    /// Cumulative oracle calls.
    pub evals: u64,
}

impl TrackerState {
    /// `q₀ = 0`, `D₀ = 0`.
    pub fn new(theta: Vec<f64>) -> Self {
        let d = theta.len();
        Self { theta, q: 0.0, grad: vec![0.0; d], k: 0, evals: 0 }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.theta.iter().all(|t| t.is_finite())
    }
}

/// A Rademacher direction: every component is exactly `±1`, so
/// dividing by a component is the same as multiplying by it.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDirection(Vec<f64>);

impl RandomDirection {
    /// Returns `None` unless every entry is `±1`.
    pub fn from_signs(components: Vec<f64>) -> Option<Self> {
        components
            .iter()
            .all(|c| *c == 1.0 || *c == -1.0)
            .then_some(Self(components))
    }

    /// The all-ones direction; `e₁` when `dim == 1`.
    pub fn unit(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Whether the two sides of a difference share input randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CrnMode {
    #[default]
    Independent,
    Common,
}

/// `d` i.i.d. symmetric `±1` components.
pub fn draw_direction(rng: &mut dyn RngCore, dim: usize) -> RandomDirection {
    RandomDirection(
        (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// `q + γ·(φ − I{y ≤ q})`.
pub fn quantile_step(q: f64, gamma: f64, phi: f64, y: f64) -> f64 {
    q + gamma * (phi - indicator(y <= q))
}

#[inline]
fn indicator(fired: bool) -> f64 {
    if fired {
        1.0
    } else {
        0.0
    }
}

/// Streams for the plus and minus evaluations of one difference.
///
/// Two seeds are always drawn so that both modes advance the parent
/// stream identically; in common mode the minus side replays the plus side.
fn pair_streams(rng: &mut dyn RngCore, crn: CrnMode) -> (ChaCha8Rng, ChaCha8Rng) {
    let plus_seed = rng.next_u64();
    let minus_seed = rng.next_u64();
    let plus = ChaCha8Rng::seed_from_u64(plus_seed);
    let minus = match crn {
        CrnMode::Common => plus.clone(),
        CrnMode::Independent => ChaCha8Rng::seed_from_u64(minus_seed),
    };
    (plus, minus)
}

fn shifted(theta: &[f64], step: f64, direction: &[f64]) -> Vec<f64> {
    theta.iter().zip(direction).map(|(t, d)| t + step * d).collect()
}

/// Evaluates the two indicators `(I⁺, I⁻)` of one SP difference:
/// `I± = I{Y(θ ± c̄Δ) ≤ q ± c̄·DᵀΔ}`. Consumes two oracle calls.
pub fn sp_indicators(
    state: &TrackerState,
    c_bar: f64,
    direction: &RandomDirection,
    oracle: &dyn BlackBox,
    crn: CrnMode,
    rng: &mut dyn RngCore,
) -> Result<(bool, bool), ProblemError> {
    let delta = direction.components();
    let q_shift = c_bar * direction.dot(&state.grad);
    let (mut plus_stream, mut minus_stream) = pair_streams(rng, crn);
    let y_plus = oracle.sample(&shifted(&state.theta, c_bar, delta), &mut plus_stream)?;
    let y_minus = oracle.sample(&shifted(&state.theta, -c_bar, delta), &mut minus_stream)?;
    Ok((y_plus <= state.q + q_shift, y_minus <= state.q - q_shift))
}

/// The SP difference quotient `(−I⁺ + I⁻)/(2c̄)·Δ` for given indicators.
pub fn sp_quotient(c_bar: f64, direction: &RandomDirection, plus: bool, minus: bool) -> Vec<f64> {
    let numerator = indicator(minus) - indicator(plus);
    direction
        .components()
        .iter()
        .map(|d| numerator / (2.0 * c_bar) * d)
        .collect()
}

/// `D + β·(−I⁺ + I⁻)/(2c̄)·Δ`.
pub fn sp_increment(
    grad: &[f64],
    beta: f64,
    c_bar: f64,
    direction: &RandomDirection,
    plus: bool,
    minus: bool,
) -> Vec<f64> {
    grad.iter()
        .zip(sp_quotient(c_bar, direction, plus, minus))
        .map(|(g, v)| g + beta * v)
        .collect()
}

/// One simultaneous-perturbation update of the gradient tracker.
/// Returns the new gradient estimate and the oracle calls used (always 2).
pub fn sp_gradient_step(
    state: &TrackerState,
    beta: f64,
    c_bar: f64,
    direction: &RandomDirection,
    oracle: &dyn BlackBox,
    crn: CrnMode,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, u64), ProblemError> {
    let (plus, minus) = sp_indicators(state, c_bar, direction, oracle, crn, rng)?;
    Ok((sp_increment(&state.grad, beta, c_bar, direction, plus, minus), 2))
}

/// Evaluates the `d` indicator pairs of one coordinatewise difference:
/// `I±_i = I{Y(θ ± c̃e_i) ≤ q ± c̃·D_i}`. Consumes `2d` oracle calls.
///
/// In common mode every call of the iteration replays one stream.
pub fn sd_indicators(
    state: &TrackerState,
    c_tilde: f64,
    oracle: &dyn BlackBox,
    crn: CrnMode,
    rng: &mut dyn RngCore,
) -> Result<Vec<(bool, bool)>, ProblemError> {
    let shared = match crn {
        CrnMode::Common => Some(ChaCha8Rng::seed_from_u64(rng.next_u64())),
        CrnMode::Independent => None,
    };
    let mut point = state.theta.clone();
    let mut pairs = Vec::with_capacity(state.dim());
    for i in 0..state.dim() {
        let (mut plus_stream, mut minus_stream) = match &shared {
            Some(stream) => (stream.clone(), stream.clone()),
            None => pair_streams(rng, CrnMode::Independent),
        };
        let base = point[i];
        point[i] = base + c_tilde;
        let y_plus = oracle.sample(&point, &mut plus_stream)?;
        point[i] = base - c_tilde;
        let y_minus = oracle.sample(&point, &mut minus_stream)?;
        point[i] = base;
        let q_shift = c_tilde * state.grad[i];
        pairs.push((y_plus <= state.q + q_shift, y_minus <= state.q - q_shift));
    }
    Ok(pairs)
}

/// `D + (β/(2c̃))·v` with `v_i = −I⁺_i + I⁻_i`.
pub fn sd_increment(grad: &[f64], beta: f64, c_tilde: f64, pairs: &[(bool, bool)]) -> Vec<f64> {
    grad.iter()
        .zip(pairs)
        .map(|(g, (plus, minus))| g + beta / (2.0 * c_tilde) * (indicator(*minus) - indicator(*plus)))
        .collect()
}

/// One symmetric-difference update of the gradient tracker.
/// Returns the new gradient estimate and the oracle calls used (`2d`).
pub fn sd_gradient_step(
    state: &TrackerState,
    beta: f64,
    c_tilde: f64,
    oracle: &dyn BlackBox,
    crn: CrnMode,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, u64), ProblemError> {
    let pairs = sd_indicators(state, c_tilde, oracle, crn, rng)?;
    Ok((sd_increment(&state.grad, beta, c_tilde, &pairs), 2 * state.dim() as u64))
}
