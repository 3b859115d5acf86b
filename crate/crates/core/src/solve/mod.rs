//! MAP and minimum-energy estimation by quasi-Newton ascent.
//!
//! [`Estimator::Map`] maximizes the trapezoidal objective and
//! [`Estimator::Mee`] the Euler objective. Parameter support (for example a
//! positive measurement scale) is enforced only by the line search rejecting
//! trial points where the objective is `-inf`.

pub mod guess;
pub mod lbfgs;

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Partition, PwlPath};
use crate::objective::{DecisionVector, Discretization, ObjectiveReport, Problem};

pub use guess::{initial_guess, whittaker_gcv, CubicSpline};
pub use lbfgs::{minimize, LbfgsOptions, Minimum, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Map,
    Mee,
}

impl Estimator {
    pub fn discretization(&self) -> Discretization {
        match self {
            Estimator::Map => Discretization::Trapezoidal,
            Estimator::Mee => Discretization::Euler,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Map => "map",
            Estimator::Mee => "mee",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Gradient-norm tolerance; `None` means `1e-6 (1 + |objective at start|)`.
    pub grad_tol: Option<f64>,
    pub max_iters: usize,
    pub sufficient_decrease: f64,
    pub curvature: f64,
    pub memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { grad_tol: None, max_iters: 500, sufficient_decrease: 1e-4, curvature: 0.9, memory: 20 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.sufficient_decrease && self.sufficient_decrease < self.curvature && self.curvature < 1.0) {
            return Err(Error::Input(format!(
                "line search needs 0 < sufficient_decrease < curvature < 1, got {} and {}",
                self.sufficient_decrease, self.curvature
            )));
        }
        if self.memory == 0 {
            return Err(Error::Input("memory must be at least 1".into()));
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return Err(Error::Input(format!("grad_tol must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub v: DecisionVector,
    pub report: ObjectiveReport,
    pub x_path: PwlPath,
    pub initial_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: Termination,
    /// Objective at every accepted iterate.
    pub trace: Vec<f64>,
    /// Largest Picard iteration count over every evaluation of the solve.
    pub picard_max: usize,
    /// Evaluations rejected because the clean-state step did not converge.
    pub fixed_point_failures: usize,
    pub wall_time: f64,
}

impl EstimateResult {
    pub fn z_path(&self) -> &PwlPath {
        &self.report.z
    }

    /// Full parameter vector, fixed entries included.
    pub fn theta(&self, problem: &Problem) -> Vec<f64> {
        problem.layout.expand(&self.v.theta)
    }
}

/// Maximize the objective of `kind` from `v0`.
pub fn maximize(kind: Discretization, problem: &Problem, v0: &DecisionVector, cfg: &SolverConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let start = Instant::now();
    let f0 = problem.evaluate(kind, v0)?.value;
    if !f0.is_finite() {
        return Err(Error::Input(format!("objective is {f0} at the starting point")));
    }
    let opts = LbfgsOptions {
        grad_tol: cfg.grad_tol.unwrap_or(1e-6 * (1.0 + f0.abs())),
        max_iters: cfg.max_iters,
        c1: cfg.sufficient_decrease,
        c2: cfg.curvature,
        memory: cfg.memory,
    };
    let picard_max = Cell::new(0);
    let failures = Cell::new(0);
    let fg = |flat: &[f64]| -> Option<(f64, Vec<f64>)> {
        let v = problem.unflatten(flat).ok()?;
        match problem.evaluate_with_gradient(kind, &v) {
            Ok((rep, g)) => {
                picard_max.set(picard_max.get().max(rep.picard_iterations));
                Some((-rep.value, g.into_iter().map(|a| -a).collect()))
            }
            Err(e) => {
                if matches!(e, Error::FixedPoint { .. }) {
                    failures.set(failures.get() + 1);
                }
                None
            }
        }
    };
    let min = minimize(fg, v0.flatten(), &opts)
        .ok_or_else(|| Error::Input("objective gradient undefined at the starting point".into()))?;
    let v = problem.unflatten(&min.x)?;
    let report = problem.evaluate(kind, &v)?;
    let x_path = v.x_path(&problem.grid)?;
    Ok(EstimateResult {
        initial_value: f0,
        iterations: min.iterations,
        grad_norm: min.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
        termination: min.termination,
        trace: min.values.iter().map(|f| -f).collect(),
        picard_max: picard_max.get().max(report.picard_iterations),
        fixed_point_failures: failures.get(),
        wall_time: start.elapsed().as_secs_f64(),
        v,
        report,
        x_path,
    })
}

/// Partition whose nodes are the measurement times, with `0` and the
/// horizon added when missing. Evenly spaced times give a uniform partition.
pub fn measurement_grid(times: &[f64], t_f: f64) -> Result<Partition> {
    let tol = 1e-9 * t_f.max(1.0);
    let mut nodes: Vec<f64> = Vec::with_capacity(times.len() + 2);
    if times.first().is_none_or(|t| *t > tol) {
        nodes.push(0.0);
    }
    nodes.extend_from_slice(times);
    if nodes.last().is_some_and(|t| *t < t_f - tol) {
        nodes.push(t_f);
    }
    let n = nodes.len() - 1;
    if n > 0 && nodes.iter().enumerate().all(|(k, t)| (t - t_f * k as f64 / n as f64).abs() <= tol) {
        return Partition::uniform(t_f, n);
    }
    Partition::from_nodes(nodes)
}

/// Problem on the measurement grid refined `refinement` times.
pub fn refined_problem(problem: &Problem, refinement: u32) -> Result<Problem> {
    let grid = measurement_grid(problem.data.times(), problem.grid.horizon())?.refine(refinement);
    let mut p = Problem::new(
        problem.model.clone(),
        problem.prior.clone(),
        problem.measurement.clone(),
        problem.data.clone(),
        grid,
        problem.layout.clone(),
    )?;
    p.picard = problem.picard;
    Ok(p)
}

/// Initial guess followed by [`maximize`] on the measurement grid refined
/// `refinement` times. Returns the refined problem with the result.
pub fn estimate(
    problem: &Problem,
    estimator: Estimator,
    refinement: u32,
    cfg: &SolverConfig,
) -> Result<(Problem, EstimateResult)> {
    let p = refined_problem(problem, refinement)?;
    if p.data.dim() != 1 {
        return Err(Error::Input("initial guess needs scalar measurements".into()));
    }
    let v0 = initial_guess(p.data.times(), p.data.values(), &p.grid, &p.model, p.prior.as_ref(), &p.layout)?;
    let r = maximize(estimator.discretization(), &p, &v0, cfg)?;
    Ok((p, r))
}
