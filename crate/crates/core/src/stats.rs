//! Order statistics, replication summaries and decay-rate fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::trace::RunTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("quantile level {0} must lie in (0,1)")]
    QuantileLevel(f64),
    #[error("need at least {need} runs, got {got}")]
    TooFewRuns { need: usize, got: usize },
    #[error("degenerate window: {0}")]
    Window(String),
}

/// 1-based index `⌈nφ⌉`, guarded against round-off when `nφ` is integral.
pub fn order_statistic_index(n: usize, phi: f64) -> usize {
    let x = n as f64 * phi;
    let nearest = x.round();
    let idx = if (x - nearest).abs() <= 1e-9 * x.max(1.0) { nearest } else { x.ceil() };
    (idx as usize).clamp(1, n.max(1))
}

/// The `⌈nφ⌉`-th smallest element. Reorders `sample`.
pub fn order_statistic_quantile(sample: &mut [f64], phi: f64) -> Result<f64, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if !(phi > 0.0 && phi < 1.0) {
        return Err(StatsError::QuantileLevel(phi));
    }
    let idx = order_statistic_index(sample.len(), phi);
    sample.sort_unstable_by(f64::total_cmp);
    Ok(sample[idx - 1])
}

/// Mean and standard error (`sd / √n`, with the `n − 1` variance) of `xs`.
pub fn mean_stderr(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewRuns { need: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Replicated outcome of one algorithm on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: String,
    pub problem: String,
    pub phi: f64,
    pub runs: usize,
    pub mean_final: f64,
    pub stderr_final: f64,
    /// `(evaluations, mean true value)` on a shared evaluation grid.
    pub mean_trace: Vec<(f64, f64)>,
}

/// Summarizes final values and averages the true-value curves of `traces`
/// on `points` evenly spaced evaluation counts.
pub fn summarize(
    algorithm: &str,
    problem: &str,
    phi: f64,
    finals: &[f64],
    traces: &[RunTrace],
    points: usize,
) -> Result<ExperimentSummary, StatsError> {
    let (mean_final, stderr_final) = mean_stderr(finals)?;
    Ok(ExperimentSummary {
        algorithm: algorithm.to_string(),
        problem: problem.to_string(),
        phi,
        runs: finals.len(),
        mean_final,
        stderr_final,
        mean_trace: mean_curve(traces, points),
    })
}

/// Pointwise mean of the `(evals, true value)` curves, linearly
/// interpolated onto a grid spanning the evaluations every trace covers.
pub fn mean_curve(traces: &[RunTrace], points: usize) -> Vec<(f64, f64)> {
    let curves: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .map(|t| {
            t.rows
                .iter()
                .filter_map(|r| r.true_value.map(|v| (r.evals as f64, v)))
                .collect::<Vec<_>>()
        })
        .filter(|c| !c.is_empty())
        .collect();
    if curves.is_empty() || points == 0 {
        return Vec::new();
    }
    let start = curves.iter().map(|c| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let end = curves.iter().map(|c| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    let (start, end) = if end >= start { (start, end) } else { (end, end) };
    let grid: Vec<f64> = if points == 1 || end == start {
        vec![end]
    } else {
        (0..points)
            .map(|i| start + (end - start) * i as f64 / (points - 1) as f64)
            .collect()
    };
    grid.into_iter()
        .map(|x| {
            let mean = curves.iter().map(|c| interpolate(c, x)).sum::<f64>() / curves.len() as f64;
            (x, mean)
        })
        .collect()
}

fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    match curve.binary_search_by(|(cx, _)| cx.total_cmp(&x)) {
        Ok(i) => curve[i].1,
        Err(0) => curve[0].1,
        Err(i) if i == curve.len() => curve[i - 1].1,
        Err(i) => {
            let (x0, y0) = curve[i - 1];
            let (x1, y1) = curve[i];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// Least-squares slope of `ln MAE(k)` against `ln k`, where `MAE(k)` is the
/// ensemble mean of `‖θ_k − θ*‖` at log-spaced iterations in `[k_lo, k_hi]`.
///
/// Each target iteration is matched to the latest recorded row at or
/// before it; the abscissa is that row's actual iteration.
pub fn empirical_rate(
    traces: &[RunTrace],
    theta_star: &[f64],
    window: (u64, u64),
) -> Result<f64, StatsError> {
    const MIN_RUNS: usize = 10;
    const POINTS: usize = 25;
    let (k_lo, k_hi) = window;
    if traces.len() < MIN_RUNS {
        return Err(StatsError::TooFewRuns { need: MIN_RUNS, got: traces.len() });
    }
    if k_lo < 10 || k_hi <= k_lo {
        return Err(StatsError::Window(format!("need 10 <= k_lo < k_hi, got [{k_lo}, {k_hi}]")));
    }
    let shortest = traces.iter().map(|t| t.iterations).min().unwrap_or(0);
    if k_hi > shortest {
        return Err(StatsError::Window(format!(
            "k_hi = {k_hi} exceeds the shortest trace ({shortest} iterations)"
        )));
    }
    let (lo, hi) = ((k_lo as f64).ln(), (k_hi as f64).ln());
    let mut abscissae: Vec<u64> = Vec::new();
    let mut ordinates: Vec<f64> = Vec::new();
    for i in 0..POINTS {
        let target = (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp().round() as u64;
        let mut total = 0.0;
        let mut k_at = None;
        for t in traces {
            let pos = t.rows.partition_point(|r| r.k <= target);
            if pos == 0 {
                return Err(StatsError::Window(format!("no recorded row at or before k = {target}")));
            }
            let row = &t.rows[pos - 1];
            k_at.get_or_insert(row.k);
            total += row
                .theta
                .iter()
                .zip(theta_star)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        let k = k_at.expect("at least one trace");
        if abscissae.last() == Some(&k) {
            continue;
        }
        abscissae.push(k);
        ordinates.push((total / traces.len() as f64).ln());
    }
    if abscissae.len() < 2 {
        return Err(StatsError::Window("fewer than two distinct recorded iterations".into()));
    }
    let xs: Vec<f64> = abscissae.iter().map(|k| (*k as f64).ln()).collect();
    Ok(least_squares_slope(&xs, &ordinates))
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
