//! Quantile optimization of noisy black-box simulators by three-timescale
//! stochastic approximation.
//!
//! The tracking optimizers ([`optimizers::run_spqo`], [`optimizers::run_sdqo`])
//! carry a running quantile estimate `q_k` and a running quantile-gradient
//! estimate `D_k` alongside the parameter `θ_k`, spending two (simultaneous
//! perturbation) or `2d` (coordinatewise) extra oracle calls per iteration.
//! [`optimizers::run_qg`] is an order-statistics baseline.

pub mod estimators;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod schedules;
pub mod stats;

pub use estimators::{CrnMode, TrackerState};
pub use harness::trace::{RunTrace, TraceRow};
pub use harness::{load_config, run_experiment, Algorithm, ExperimentConfig};
pub use optimizers::{
    run_qg, run_sdqo, run_spqo, FeasibleBox, GradientScheme, QgConfig, QuadraticPenalty,
    TrackingSettings,
};
pub use problems::{BlackBox, Mm1Problem, NoiseKind, TestCase};
pub use schedules::GainSchedule;
