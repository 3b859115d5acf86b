//! Path error and Monte Carlo summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PwlPath;
use crate::sim::Trajectory;

/// Normalized integrated square error
/// `(1/t_f) int |X - x_hat|^2 + |Z - z_hat|^2 dt`, by the trapezoid rule on
/// the simulation grid of `truth`.
pub fn ise(truth: &Trajectory, x_hat: &PwlPath, z_hat: &PwlPath) -> Result<f64> {
    let t_f = truth.horizon();
    let tol = 1e-9 * t_f.max(1.0);
    for p in [x_hat, z_hat] {
        let h = p.partition().horizon();
        if (h - t_f).abs() > tol {
            return Err(Error::HorizonMismatch { left: t_f, right: h });
        }
    }
    if x_hat.dim() != truth.n || z_hat.dim() != truth.q {
        return Err(Error::Input("estimate dimensions differ from the truth".into()));
    }
    let sq = |k: usize| -> Result<f64> {
        let t = truth.times[k].min(x_hat.partition().horizon());
        let x = x_hat.eval(t)?;
        let z = z_hat.eval(t.min(z_hat.partition().horizon()))?;
        let ex: f64 = truth.x_at(k).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let ez: f64 = truth.z_at(k).iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(ex + ez)
    };
    let mut total = 0.0;
    let mut prev = sq(0)?;
    for k in 1..truth.len() {
        let cur = sq(k)?;
        total += 0.5 * (truth.times[k] - truth.times[k - 1]) * (prev + cur);
        prev = cur;
    }
    Ok(total / t_f)
}

/// One estimator's outcome on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    /// Full parameter vector by name.
    pub theta: BTreeMap<String, f64>,
    pub ise: f64,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: String,
    /// Largest Picard iteration count seen during the solve.
    pub picard_iterations: usize,
    pub fixed_point_failures: usize,
}

/// Record of one Monte Carlo replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub replicate: usize,
    pub seed: u64,
    /// Keyed by estimator label.
    pub estimates: BTreeMap<String, EstimatorOutcome>,
    /// Set when the replicate failed before producing estimates.
    pub error: Option<String>,
}

/// Five-number summary with quartiles as Tukey hinges: the medians of the
/// lower and upper halves, both halves containing the median when the count
/// is odd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub max: f64,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Stats {
    /// `None` for an empty slice. NaN values are ignored.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let half = n.div_ceil(2);
        Some(Stats {
            count: n,
            min: v[0],
            lower_quartile: median_sorted(&v[..half]),
            median: median_sorted(&v),
            upper_quartile: median_sorted(&v[n - half..]),
            max: v[n - 1],
        })
    }
}

/// Estimator label -> quantity -> statistics. Quantities are `ise`,
/// `objective`, `iterations` and `theta.<name>`.
pub type SummaryTable = BTreeMap<String, BTreeMap<String, Stats>>;

/// Summaries over the replicates that produced each estimator. The result
/// does not depend on the order of `runs`.
pub fn aggregate(runs: &[RunSummary]) -> SummaryTable {
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by_key(|r| r.replicate);
    let mut columns: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for run in sorted {
        for (label, out) in &run.estimates {
            let col = columns.entry(label.clone()).or_default();
            col.entry("ise".into()).or_default().push(out.ise);
            col.entry("objective".into()).or_default().push(out.objective);
            col.entry("iterations".into()).or_default().push(out.iterations as f64);
            for (name, v) in &out.theta {
                col.entry(format!("theta.{name}")).or_default().push(*v);
            }
        }
    }
    columns
        .into_iter()
        .map(|(label, col)| {
            let stats = col.into_iter().filter_map(|(q, v)| Stats::of(&v).map(|s| (q, s))).collect();
            (label, stats)
        })
        .collect()
}
