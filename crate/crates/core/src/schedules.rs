//! Gain sequences for the three coupled recursions.
//!
//! Every tracking optimizer is driven by four deterministic sequences:
//!
//! | sequence | form                  | drives                          |
//! |----------|-----------------------|---------------------------------|
//! | `α_k`    | `a / k^alpha`         | parameter update (slowest)      |
//! | `γ_k`    | `r / k^gamma`         | quantile tracker                |
//! | `β_k`    | `b / (k + R)^beta`    | gradient tracker (fastest)      |
//! | `c_k`    | `c / (k + R)^tau`     | finite-difference perturbation  |
//!
//! Iterations are counted from `k = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the iteration budget used as the stability shift `R`.
pub const SHIFT_FRACTION: f64 = 0.1;
/// Lower bound on `β_k` over the first `R` iterations.
pub const KAPPA_BETA: f64 = 0.05;
/// Lower bound on `c_k` over the first `R` iterations.
pub const KAPPA_C: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("evaluation budget {budget} cannot cover one iteration of {per_iter} evaluations")]
    BudgetTooSmall { budget: u64, per_iter: u64 },
    #[error("schedule field `{field}` must be {requirement} (got {value})")]
    Invalid {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// Hyper-parameters of the four gain sequences.
///
/// Field names double as the keys of the `schedule` block in experiment
/// configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSchedule {
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
    pub r: f64,
    pub gamma: f64,
    pub c: f64,
    pub tau: f64,
    #[serde(rename = "shift_R")]
    pub shift_r: u64,
}

/// The four gains at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c: f64,
}

impl GainSchedule {
    /// Benchmark recipe: `R` is 10% of the iteration budget, `β_k` and `c_k`
    /// stay above 0.05 and 0.5 for the first `R` iterations, and the
    /// quantile gain numerator is `R` itself. `R` is at least 1 so that
    /// tiny budgets still get positive gains.
    pub fn recipe(eval_budget: u64, evals_per_iter: u64) -> Result<Self, ScheduleError> {
        let max_iter = max_iterations(eval_budget, evals_per_iter)?;
        let shift = ((SHIFT_FRACTION * max_iter as f64).round() as u64).max(1);
        let two_r = 2.0 * shift as f64;
        let (alpha, gamma, beta, tau) = (0.99, 0.75, 0.74, 0.125);
        Ok(Self {
            a: 2.0,
            alpha,
            b: KAPPA_BETA * two_r.powf(beta),
            beta,
            r: shift as f64,
            gamma,
            c: KAPPA_C * two_r.powf(tau),
            tau,
            shift_r: shift,
        })
    }

    /// Gains at iteration `k` (`k >= 1`).
    pub fn gains_at(&self, k: u64) -> Gains {
        debug_assert!(k >= 1, "iterations are counted from 1");
        let k = k.max(1) as f64;
        let shifted = k + self.shift_r as f64;
        Gains {
            alpha: self.a / k.powf(self.alpha),
            beta: self.b / shifted.powf(self.beta),
            gamma: self.r / k.powf(self.gamma),
            c: self.c / shifted.powf(self.tau),
        }
    }

    /// Checks positivity of the numerators and that every exponent lies in (0, 1].
    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (field, value) in [("a", self.a), ("b", self.b), ("r", self.r), ("c", self.c)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScheduleError::Invalid {
                    field,
                    requirement: "finite and strictly positive",
                    value,
                });
            }
        }
        for (field, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ScheduleError::Invalid {
                    field,
                    requirement: "in (0, 1]",
                    value,
                });
            }
        }
        Ok(())
    }

    /// `α_k = o(γ_k)` and `γ_k = o(β_k)`.
    pub fn has_timescale_separation(&self) -> bool {
        self.alpha > self.gamma && self.gamma > self.beta
    }

    /// Timescale separation plus square-summability of `β_k / c_k`,
    /// which needs `2 (beta - tau) > 1`.
    pub fn is_theory_compliant(&self) -> bool {
        self.validate().is_ok()
            && self.has_timescale_separation()
            && 2.0 * (self.beta - self.tau) > 1.0
    }
}

/// Number of whole iterations a budget pays for.
pub fn max_iterations(eval_budget: u64, evals_per_iter: u64) -> Result<u64, ScheduleError> {
    if evals_per_iter == 0 || eval_budget < evals_per_iter {
        return Err(ScheduleError::BudgetTooSmall {
            budget: eval_budget,
            per_iter: evals_per_iter,
        });
    }
    Ok(eval_budget / evals_per_iter)
}

/// Shrinks `c_k` by `M_k = max{1, ‖D‖/√d}` so that the quantile-side
/// perturbation `c̄_k·DᵀΔ` stays bounded by `c_k·d`.
pub fn adaptive_perturbation(c_k: f64, gradient: &[f64]) -> f64 {
    c_k / perturbation_scale(gradient)
}

/// `M_k = max{1, ‖D‖/√d}`.
pub fn perturbation_scale(gradient: &[f64]) -> f64 {
    let dim = gradient.len().max(1) as f64;
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    (norm / dim.sqrt()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recipe_spqo() -> GainSchedule {
        GainSchedule::recipe(300_000, 3).unwrap()
    }

    #[test]
    fn alpha_at_first_iteration_is_numerator() {
        let s = GainSchedule { a: 2.0, ..recipe_spqo() };
        assert_eq!(s.gains_at(1).alpha, 2.0);
    }

    #[test]
    fn gamma_with_exact_power() {
        let s = GainSchedule { r: 1000.0, gamma: 0.75, ..recipe_spqo() };
        assert!((s.gains_at(16).gamma - 125.0).abs() < 1e-9);
    }

    #[test]
    fn beta_cancels_at_shift() {
        let s = recipe_spqo();
        assert_eq!(s.shift_r, 10_000);
        assert!((s.b - 0.05 * 20_000f64.powf(0.74)).abs() < 1e-9);
        let g = s.gains_at(10_000);
        assert!((g.beta - 0.05).abs() < 1e-12);
        assert!((g.c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recipe_iteration_counts() {
        let s = GainSchedule::recipe(300_000, 3).unwrap();
        assert_eq!(max_iterations(300_000, 3).unwrap(), 100_000);
        assert_eq!(s.shift_r, 10_000);
        assert_eq!(s.r, 10_000.0);

        let s = GainSchedule::recipe(300_000, 41).unwrap();
        assert_eq!(max_iterations(300_000, 41).unwrap(), 7317);
        assert_eq!(s.shift_r, 732);
        assert_eq!((s.alpha, s.gamma, s.beta, s.tau), (0.99, 0.75, 0.74, 0.125));
        assert!((s.c - 0.5 * 1464f64.powf(0.125)).abs() < 1e-12);
    }

    #[test]
    fn recipe_rejects_infeasible_budget() {
        assert_eq!(
            GainSchedule::recipe(2, 3),
            Err(ScheduleError::BudgetTooSmall { budget: 2, per_iter: 3 })
        );
    }

    #[test]
    fn recipe_is_theory_compliant() {
        let s = recipe_spqo();
        assert!(s.validate().is_ok());
        assert!(s.is_theory_compliant());
        let bad = GainSchedule { beta: 0.6, ..s };
        assert!(!bad.is_theory_compliant());
    }

    #[test]
    fn validate_names_the_field() {
        let s = GainSchedule { tau: 1.5, ..recipe_spqo() };
        match s.validate() {
            Err(ScheduleError::Invalid { field, .. }) => assert_eq!(field, "tau"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adaptive_perturbation_examples() {
        assert_eq!(adaptive_perturbation(0.5, &[0.0, 0.0]), 0.5);
        let v = adaptive_perturbation(0.4, &[3.0, 4.0]);
        assert!((v - 0.4 / (5.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((v - 0.113137).abs() < 1e-6);
        assert!((adaptive_perturbation(0.4, &[1.0, 1.0]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn recipe_timescales_separate() {
        let s = recipe_spqo();
        let ratios = |k| {
            let g = s.gains_at(k);
            (g.alpha / g.gamma, g.gamma / g.beta)
        };
        let (a2, g2) = ratios(100);
        let (a4, g4) = ratios(10_000);
        let (a6, g6) = ratios(1_000_000);
        assert!(a2 > a4 && a4 > a6);
        assert!(g2 > g4 && g4 > g6);
    }

    #[test]
    fn tiny_budget_keeps_positive_gains() {
        let s = GainSchedule::recipe(40, 9).unwrap();
        assert_eq!(s.shift_r, 1);
        let g = s.gains_at(1);
        assert!(g.gamma > 0.0 && g.beta > 0.0 && g.c > 0.0);
    }

    proptest! {
        #[test]
        fn gains_are_non_increasing(
            budget in 10u64..10_000_000,
            per_iter in 1u64..50,
            k in 1u64..1_000_000,
        ) {
            prop_assume!(budget >= per_iter);
            let s = GainSchedule::recipe(budget, per_iter).unwrap();
            let now = s.gains_at(k);
            let next = s.gains_at(k + 1);
            prop_assert!(now.alpha > 0.0 && now.gamma > 0.0 && now.beta > 0.0 && now.c > 0.0);
            prop_assert!(next.alpha <= now.alpha);
            prop_assert!(next.beta <= now.beta);
            prop_assert!(next.gamma <= now.gamma);
            prop_assert!(next.c <= now.c);
        }

        #[test]
        fn adaptive_scale_round_trips(
            c in 1e-3f64..10.0,
            d in proptest::collection::vec(-50.0f64..50.0, 1..12),
        ) {
            let dim = d.len() as f64;
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scaled = adaptive_perturbation(c, &d);
            prop_assert!(scaled <= c);
            prop_assert!(scaled * norm <= c * dim.sqrt() * (1.0 + 1e-12));
            let back = scaled * (norm / dim.sqrt()).max(1.0);
            prop_assert!((back - c).abs() <= 1e-12 * c);
        }
    }
}
