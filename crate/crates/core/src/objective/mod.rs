//! Discretized and continuous log-posteriors.
//!
//! A [`Problem`] bundles a model, prior, measurement model, dataset and
//! estimation grid. Its decision variable is the [`DecisionVector`]
//! `(x_0 .. x_N, z_0, theta)`. Two discretized objectives are available:
//!
//! * Euler, `l~ = ln psi + ln pi - 1/2 sum_k delta_k |G^-1 (dx_k / delta_k - f_k)|^2`
//!   with the explicit clean recursion. Its maximizer is the minimum-energy
//!   estimate.
//! * Trapezoidal, `l^` with `f_k` replaced by `(f_k + f_{k+1}) / 2`, the
//!   implicit clean recursion and the extra term
//!   `sum_k ln det(I - 1/2 delta_k d_x f(t_{k+1}))`. Its maximizer is the MAP
//!   estimate.
//!
//! Gradients are exact: a reverse sweep through the clean-state recursion.

mod clean;
mod continuous;

pub use clean::{clean_path_euler, clean_path_trapezoidal, CleanPath, PicardOptions};
pub use continuous::{continuous_energy_log_posterior, continuous_log_posterior, SmoothPath};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Partition, PwlPath};
use crate::model::{BenchmarkSpec, Dataset, DynamicsModel, MeasurementModel, NodeStates, Prior};

/// Which discretized log-posterior to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Euler scheme, minimum-energy objective.
    Euler,
    /// Trapezoidal scheme, MAP objective.
    Trapezoidal,
}

/// Split of `theta` into estimated (free) and known (fixed) components.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    m: usize,
    free: Vec<usize>,
    values: Vec<f64>,
}

impl ParamLayout {
    pub fn all_free(m: usize) -> Self {
        Self { m, free: (0..m).collect(), values: vec![0.0; m] }
    }

    /// Layout with `theta[i] = v` held fixed for every `(i, v)` in `fixed`.
    pub fn with_fixed(m: usize, fixed: &[(usize, f64)]) -> Result<Self> {
        let mut values = vec![0.0; m];
        let mut is_fixed = vec![false; m];
        for &(i, v) in fixed {
            if i >= m {
                return Err(Error::Input(format!("fixed parameter index {i} out of range (m = {m})")));
            }
            if is_fixed[i] {
                return Err(Error::Input(format!("parameter {i} fixed twice")));
            }
            is_fixed[i] = true;
            values[i] = v;
        }
        let free = (0..m).filter(|i| !is_fixed[*i]).collect();
        Ok(Self { m, free, values })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Indices of the free components in the full vector.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free.contains(&i)
    }

    /// Full parameter vector from the free components.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = self.values.clone();
        for (i, v) in self.free.iter().zip(free) {
            full[*i] = *v;
        }
        full
    }

    /// Free components of a full parameter vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|i| full[*i]).collect()
    }
}

/// The optimization variable: noisy-state node values, initial clean state
/// and free parameters. Flattened as `[x_0 .. x_N, z_0, theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    pub n: usize,
    /// Row-major `(N+1) x n`.
    pub x: Vec<f64>,
    pub z0: Vec<f64>,
    pub theta: Vec<f64>,
}

impl DecisionVector {
    pub fn new(n: usize, x: Vec<f64>, z0: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if n == 0 || !x.len().is_multiple_of(n) || x.len() < 2 * n {
            return Err(Error::Input(format!("x has {} values, not a multiple of n = {n} covering 2+ nodes", x.len())));
        }
        Ok(Self { n, x, z0, theta })
    }

    /// Number of nodes `N + 1`.
    pub fn nodes(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn x_node(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.z0.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.z0);
        v.extend_from_slice(&self.theta);
        v
    }

    pub fn unflatten(n: usize, q: usize, nodes: usize, m: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != nodes * n + q + m {
            return Err(Error::Input(format!("flat vector has length {}, expected {}", flat.len(), nodes * n + q + m)));
        }
        let (x, rest) = flat.split_at(nodes * n);
        let (z0, theta) = rest.split_at(q);
        Self::new(n, x.to_vec(), z0.to_vec(), theta.to_vec())
    }

    /// Noisy-state path on `grid`.
    pub fn x_path(&self, grid: &Partition) -> Result<PwlPath> {
        PwlPath::new(grid.clone(), self.n, self.x.clone())
    }
}

/// Value of a discretized log-posterior and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    pub prior: f64,
    pub likelihood: f64,
    /// `-1/2 sum_k delta_k |G^-1 (...)|^2`.
    pub energy: f64,
    /// Log-determinant sum (trapezoidal) or 0 (Euler).
    pub correction: f64,
    /// Clean-state path.
    pub z: PwlPath,
    /// Largest Picard iteration count (trapezoidal), 0 for Euler.
    pub picard_iterations: usize,
    /// Why the value is `-inf`, when it is.
    pub diagnostic: Option<String>,
}

impl ObjectiveReport {
    fn infeasible(z: PwlPath, prior: f64, diagnostic: String) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            prior,
            likelihood: 0.0,
            energy: 0.0,
            correction: if prior == f64::NEG_INFINITY { 0.0 } else { f64::NEG_INFINITY },
            z,
            picard_iterations: 0,
            diagnostic: Some(diagnostic),
        }
    }
}

/// An estimation problem on a fixed grid.
#[derive(Clone)]
pub struct Problem {
    pub model: DynamicsModel,
    pub prior: Arc<dyn Prior>,
    pub measurement: Arc<dyn MeasurementModel>,
    pub data: Dataset,
    pub grid: Partition,
    pub layout: ParamLayout,
    pub picard: PicardOptions,
    meas_nodes: Vec<usize>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("model", &self.model)
            .field("grid_len", &self.grid.len())
            .field("data_len", &self.data.len())
            .field("layout", &self.layout)
            .finish()
    }
}

/// Per-node forward quantities.
struct Forward {
    z: Vec<f64>,
    f: Vec<f64>,
    picard: usize,
}

impl Problem {
    pub fn new(
        model: DynamicsModel,
        prior: Arc<dyn Prior>,
        measurement: Arc<dyn MeasurementModel>,
        data: Dataset,
        grid: Partition,
        layout: ParamLayout,
    ) -> Result<Self> {
        let dims = model.dims();
        if layout.m() != dims.m {
            return Err(Error::Input(format!("layout covers {} parameters, model has {}", layout.m(), dims.m)));
        }
        if dims.n == 0 {
            return Err(Error::Input("the noisy state must be non-empty".into()));
        }
        if !data.is_empty() && data.dim() != measurement.output_dim() {
            return Err(Error::Input(format!(
                "dataset has dimension {}, measurement model expects {}",
                data.dim(),
                measurement.output_dim()
            )));
        }
        measurement.validate(&data)?;
        let tol = 1e-9 * grid.horizon().max(1.0);
        let meas_nodes = data
            .times()
            .iter()
            .map(|t| {
                grid.node_index(*t, tol)
                    .ok_or_else(|| Error::Input(format!("measurement time {t} is not a node of the estimation grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        model.diffusion_inv()?;
        Ok(Self { model, prior, measurement, data, grid, layout, picard: PicardOptions::default(), meas_nodes })
    }

    /// Problem for a benchmark on the measurement grid refined `refinement` times.
    pub fn from_benchmark(spec: &BenchmarkSpec, data: Dataset, refinement: u32, layout: ParamLayout) -> Result<Self> {
        let grid = Partition::uniform(spec.t_f, spec.intervals())?.refine(refinement);
        Self::new(spec.model.clone(), spec.prior.clone(), spec.measurement.clone(), data, grid, layout)
    }

    /// Whether `(L_f + L_h) mesh < 2` holds; `None` when the model has no hint.
    pub fn contraction_condition(&self) -> Option<bool> {
        self.model.trapezoid_condition(self.grid.mesh())
    }

    /// Length of the flattened decision vector.
    pub fn dim(&self) -> usize {
        let d = self.model.dims();
        self.grid.len() * d.n + d.q + self.layout.free_count()
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<DecisionVector> {
        let d = self.model.dims();
        DecisionVector::unflatten(d.n, d.q, self.grid.len(), self.layout.free_count(), flat)
    }

    fn check(&self, v: &DecisionVector) -> Result<()> {
        let d = self.model.dims();
        if v.n != d.n || v.nodes() != self.grid.len() || v.z0.len() != d.q || v.theta.len() != self.layout.free_count() {
            return Err(Error::Input("decision vector does not match the problem dimensions".into()));
        }
        Ok(())
    }

    fn forward(&self, kind: Discretization, x: &[f64], z0: &[f64], theta: &[f64]) -> Result<Forward> {
        let (z, picard) = match kind {
            Discretization::Euler => (clean::euler_nodes(&self.model, &self.grid, x, z0, theta)?, 0),
            Discretization::Trapezoidal => {
                let (z, it, _) = clean::trapezoidal_nodes(&self.model, &self.grid, x, z0, theta, &self.picard)?;
                (z, it)
            }
        };
        let (n, q) = (self.model.dims().n, self.model.dims().q);
        let mut f = vec![0.0; self.grid.len() * n];
        for k in 0..self.grid.len() {
            let fk = &mut f[k * n..(k + 1) * n];
            self.model.drift_noisy(self.grid.node(k), &x[k * n..(k + 1) * n], &z[k * q..(k + 1) * q], theta, fk);
            if fk.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { step: k, message: "noisy drift returned a non-finite value".into() });
            }
        }
        Ok(Forward { z, f, picard })
    }

    fn gather(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, q) = (self.model.dims().n, self.model.dims().q);
        let mut xs = Vec::with_capacity(self.meas_nodes.len() * n);
        let mut zs = Vec::with_capacity(self.meas_nodes.len() * q);
        for &k in &self.meas_nodes {
            xs.extend_from_slice(&x[k * n..(k + 1) * n]);
            zs.extend_from_slice(&z[k * q..(k + 1) * q]);
        }
        (xs, zs)
    }

    /// Residuals `r_k = G^-1 (dx_k / delta_k - fbar_k)`, row-major `N x n`.
    fn residuals(&self, kind: Discretization, x: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let n = self.model.dims().n;
        let ginv = self.model.diffusion_inv()?;
        let mut r = vec![0.0; self.grid.intervals() * n];
        let mut u = DVector::zeros(n);
        for k in 0..self.grid.intervals() {
            let d = self.grid.width(k);
            for i in 0..n {
                let fbar = match kind {
                    Discretization::Euler => f[k * n + i],
                    Discretization::Trapezoidal => 0.5 * (f[k * n + i] + f[(k + 1) * n + i]),
                };
                u[i] = (x[(k + 1) * n + i] - x[k * n + i]) / d - fbar;
            }
            let ru = ginv * &u;
            r[k * n..(k + 1) * n].copy_from_slice(ru.as_slice());
        }
        Ok(r)
    }

    /// `I - 1/2 delta_k d_x f` at node `k + 1`.
    fn logdet_matrix(&self, k: usize, x: &[f64], z: &[f64], theta: &[f64], jac: &mut [f64]) -> DMatrix<f64> {
        let d = self.model.dims();
        let (n, q, vars) = (d.n, d.q, d.vars());
        let j = k + 1;
        self.model.noisy_jacobian(self.grid.node(j), &x[j * n..(j + 1) * n], &z[j * q..(j + 1) * q], theta, jac);
        let half = 0.5 * self.grid.width(k);
        DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } - half * jac[r * vars + c])
    }

    /// Evaluate a discretized log-posterior.
    pub fn evaluate(&self, kind: Discretization, v: &DecisionVector) -> Result<ObjectiveReport> {
        self.check(v)?;
        let theta = self.layout.expand(&v.theta);
        let d = self.model.dims();
        let constant_z = || PwlPath::new(self.grid.clone(), d.q, v.z0.repeat(self.grid.len()));
        let prior = self.prior.log_density(v.x_node(0), &v.z0, &theta);
        if !self.prior.in_support(&theta) || prior == f64::NEG_INFINITY {
            return Ok(ObjectiveReport::infeasible(
                constant_z()?,
                f64::NEG_INFINITY,
                "parameters outside the prior support".into(),
            ));
        }
        let fw = self.forward(kind, &v.x, &v.z0, &theta)?;
        let z_path = PwlPath::new(self.grid.clone(), d.q, fw.z.clone())?;
        let r = self.residuals(kind, &v.x, &fw.f)?;
        let energy = -0.5
            * (0..self.grid.intervals())
                .map(|k| self.grid.width(k) * r[k * d.n..(k + 1) * d.n].iter().map(|a| a * a).sum::<f64>())
                .sum::<f64>();
        let mut correction = 0.0;
        if kind == Discretization::Trapezoidal {
            let mut jac = vec![0.0; d.n * d.vars()];
            for k in 0..self.grid.intervals() {
                let b = self.logdet_matrix(k, &v.x, &fw.z, &theta, &mut jac);
                let det = b.lu().determinant();
                if !(det > 0.0 && det.is_finite()) {
                    let mut rep = ObjectiveReport::infeasible(
                        z_path,
                        prior,
                        format!("det(I - delta/2 d_x f) = {det:e} at node {} (mesh too coarse for these parameters)", k + 1),
                    );
                    rep.picard_iterations = fw.picard;
                    return Ok(rep);
                }
                correction += det.ln();
            }
        }
        let (xs, zs) = self.gather(&v.x, &fw.z);
        let likelihood = self.measurement.log_likelihood(&self.data, &NodeStates { n: d.n, q: d.q, x: &xs, z: &zs }, &theta)?;
        let value = prior + likelihood + energy + correction;
        Ok(ObjectiveReport {
            value,
            prior,
            likelihood,
            energy,
            correction,
            z: z_path,
            picard_iterations: fw.picard,
            diagnostic: None,
        })
    }

    /// Objective value at a flattened decision vector.
    pub fn value(&self, kind: Discretization, flat: &[f64]) -> Result<f64> {
        Ok(self.evaluate(kind, &self.unflatten(flat)?)?.value)
    }

    /// Gradient of the objective with respect to the flattened decision vector.
    pub fn gradient(&self, kind: Discretization, v: &DecisionVector) -> Result<Vec<f64>> {
        Ok(self.evaluate_with_gradient(kind, v)?.1)
    }

    /// Value and gradient together.
    pub fn evaluate_with_gradient(&self, kind: Discretization, v: &DecisionVector) -> Result<(ObjectiveReport, Vec<f64>)> {
        let report = self.evaluate(kind, v)?;
        if !report.value.is_finite() {
            return Err(Error::Gradient(format!(
                "objective is not finite: {}",
                report.diagnostic.clone().unwrap_or_else(|| "non-finite value".into())
            )));
        }
        let d = self.model.dims();
        let (n, q, m, vars) = (d.n, d.q, d.m, d.vars());
        let nodes = self.grid.len();
        let theta = self.layout.expand(&v.theta);
        let x = &v.x;
        let z = report.z.values();

        let mut gx = vec![0.0; nodes * n];
        let mut gz = vec![0.0; nodes * q];
        let mut gt = vec![0.0; m];
        let mut gz0 = vec![0.0; q];

        // prior
        {
            let (gx0, _) = gx.split_at_mut(n);
            self.prior.add_gradient(v.x_node(0), &v.z0, &theta, gx0, &mut gz0, &mut gt);
        }
        for i in 0..q {
            gz[i] += gz0[i];
        }

        // likelihood
        let (xs, zs) = self.gather(x, z);
        let mut gxs = vec![0.0; xs.len()];
        let mut gzs = vec![0.0; zs.len()];
        self.measurement.add_gradient(&self.data, &NodeStates { n, q, x: &xs, z: &zs }, &theta, &mut gxs, &mut gzs, &mut gt)?;
        for (i, &k) in self.meas_nodes.iter().enumerate() {
            for a in 0..n {
                gx[k * n + a] += gxs[i * n + a];
            }
            for b in 0..q {
                gz[k * q + b] += gzs[i * q + b];
            }
        }

        // energy: adjoint of the drift values per node
        let mut f = vec![0.0; nodes * n];
        for k in 0..nodes {
            self.model.drift_noisy(
                self.grid.node(k),
                &x[k * n..(k + 1) * n],
                &z[k * q..(k + 1) * q],
                &theta,
                &mut f[k * n..(k + 1) * n],
            );
        }
        let r = self.residuals(kind, x, &f)?;
        let ginv_t = self.model.diffusion_inv()?.transpose();
        let mut fadj = vec![0.0; nodes * n];
        for k in 0..self.grid.intervals() {
            let w = &ginv_t * DVector::from_column_slice(&r[k * n..(k + 1) * n]);
            let dk = self.grid.width(k);
            for i in 0..n {
                gx[(k + 1) * n + i] -= w[i];
                gx[k * n + i] += w[i];
                match kind {
                    Discretization::Euler => fadj[k * n + i] += dk * w[i],
                    Discretization::Trapezoidal => {
                        fadj[k * n + i] += 0.5 * dk * w[i];
                        fadj[(k + 1) * n + i] += 0.5 * dk * w[i];
                    }
                }
            }
        }
        let mut jf = vec![0.0; n * vars];
        for k in 0..nodes {
            let a = &fadj[k * n..(k + 1) * n];
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.model.noisy_jacobian(self.grid.node(k), &x[k * n..(k + 1) * n], &z[k * q..(k + 1) * q], &theta, &mut jf);
            accumulate_transpose(&jf, a, n, q, vars, &mut gx[k * n..(k + 1) * n], &mut gz[k * q..(k + 1) * q], &mut gt);
        }

        // log-determinant
        if kind == Discretization::Trapezoidal {
            let mut djac = vec![0.0; vars * n * n];
            let mut dv = vec![0.0; vars];
            for k in 0..self.grid.intervals() {
                let b = self.logdet_matrix(k, x, z, &theta, &mut jf);
                let binv = b
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical { node: k + 1, message: "singular log-determinant matrix".into() })?;
                let j = k + 1;
                self.model.noisy_x_jacobian_derivative(
                    self.grid.node(j),
                    &x[j * n..(j + 1) * n],
                    &z[j * q..(j + 1) * q],
                    &theta,
                    &mut djac,
                );
                let half = 0.5 * self.grid.width(k);
                for (vi, slot) in dv.iter_mut().enumerate() {
                    let block = &djac[vi * n * n..(vi + 1) * n * n];
                    let mut tr = 0.0;
                    for a in 0..n {
                        for c in 0..n {
                            tr += binv[(c, a)] * block[a * n + c];
                        }
                    }
                    *slot = -half * tr;
                }
                for a in 0..n {
                    gx[j * n + a] += dv[a];
                }
                for b in 0..q {
                    gz[j * q + b] += dv[n + b];
                }
                for i in 0..m {
                    gt[i] += dv[n + q + i];
                }
            }
        }

        // reverse sweep through the clean recursion
        if q > 0 {
            let mut jh_k = vec![0.0; q * vars];
            let mut jh_1 = vec![0.0; q * vars];
            let mut lam: Vec<f64> = gz[(nodes - 1) * q..].to_vec();
            let eval_jh = |k: usize, out: &mut [f64]| {
                self.model.clean_jacobian(self.grid.node(k), &x[k * n..(k + 1) * n], &z[k * q..(k + 1) * q], &theta, out);
            };
            for k in (0..self.grid.intervals()).rev() {
                let dk = self.grid.width(k);
                eval_jh(k, &mut jh_k);
                let mu = match kind {
                    Discretization::Euler => {
                        let mu: Vec<f64> = lam.iter().map(|l| dk * l).collect();
                        // gx_k += dk Jh_x^T lam, gtheta += dk Jh_theta^T lam
                        let mut dz = vec![0.0; q];
                        accumulate_transpose(&jh_k, &mu, q, q, vars, &mut gx[k * n..(k + 1) * n], &mut dz, &mut gt);
                        let mut next: Vec<f64> = gz[k * q..(k + 1) * q].to_vec();
                        for b in 0..q {
                            next[b] += lam[b] + dz[b];
                        }
                        lam = next;
                        continue;
                    }
                    Discretization::Trapezoidal => {
                        eval_jh(k + 1, &mut jh_1);
                        let a = DMatrix::from_fn(q, q, |r, c| f64::from(u8::from(r == c)) - 0.5 * dk * jh_1[r * vars + n + c]);
                        a.transpose()
                            .lu()
                            .solve(&DVector::from_column_slice(&lam))
                            .ok_or_else(|| Error::Numerical { node: k + 1, message: "singular clean-step matrix".into() })?
                    }
                };
                let half: Vec<f64> = mu.iter().map(|v| 0.5 * dk * v).collect();
                let mut dz_k = vec![0.0; q];
                let mut dz_1 = vec![0.0; q];
                accumulate_transpose(&jh_k, &half, q, q, vars, &mut gx[k * n..(k + 1) * n], &mut dz_k, &mut gt);
                accumulate_transpose(&jh_1, &half, q, q, vars, &mut gx[(k + 1) * n..(k + 2) * n], &mut dz_1, &mut gt);
                let mut next: Vec<f64> = gz[k * q..(k + 1) * q].to_vec();
                for b in 0..q {
                    next[b] += mu[b] + dz_k[b];
                }
                lam = next;
            }
            gz0.copy_from_slice(&lam);
        }

        let mut grad = gx;
        grad.extend_from_slice(&gz0[..q]);
        grad.extend(self.layout.free().iter().map(|i| gt[*i]));
        Ok((report, grad))
    }
}

/// `out += J^T a` split by variable block, `J` row-major `rows x (n+q+m)`.
#[allow(clippy::too_many_arguments)]
fn accumulate_transpose(
    jac: &[f64],
    a: &[f64],
    rows: usize,
    q: usize,
    vars: usize,
    gx: &mut [f64],
    gz: &mut [f64],
    gt: &mut [f64],
) {
    let n = gx.len();
    debug_assert_eq!(gz.len(), q);
    for r in 0..rows {
        let ar = a[r];
        if ar == 0.0 {
            continue;
        }
        let row = &jac[r * vars..(r + 1) * vars];
        for c in 0..n {
            gx[c] += row[c] * ar;
        }
        for c in 0..q {
            gz[c] += row[n + c] * ar;
        }
        for (c, g) in gt.iter_mut().enumerate() {
            *g += row[n + q + c] * ar;
        }
    }
}
