//! Linear-Gaussian reference solutions.
//!
//! For affine drifts and Gaussian priors and measurements the Euler
//! objective is the log-density of a discrete linear-Gaussian state-space
//! model, so its maximizer is the posterior mean. Two independent
//! computations of that mean are provided: a Kalman filter with a
//! Rauch–Tung–Striebel backward pass, and a dense solve of the normal
//! equations with the clean states eliminated.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Partition;
use crate::model::{
    Dataset, DynamicsModel, IndependentPrior, LinearDrift, LinearGaussianMeasurement, Marginal, MeasurementModel, Prior,
    ValidityBox,
};
use crate::objective::{ParamLayout, Problem};
use crate::rng;

/// Diagonal added to the clean block of the process covariance in the
/// Kalman recursion.
pub const CLEAN_JITTER: f64 = 1e-12;

/// Largest unknown count accepted by [`dense_map`].
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub node: usize,
    pub y: DVector<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// `s_{k+1} = A_k s_k + b_k + w_k`, `w_k ~ N(0, Q_k)`, `s = [x; z]`, with
/// observations `y = C s_k + N(0, R)` at chosen nodes and
/// `s_0 ~ N(mu0, P0)`. Only the noisy block of `Q_k` is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSystem {
    pub n: usize,
    pub q: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub process: Vec<DMatrix<f64>>,
    pub observations: Vec<Observation>,
    pub mu0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

fn pd_check(m: &DMatrix<f64>, what: &str, node: usize) -> Result<()> {
    let sym = (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1e-300);
    if !sym || m.clone().cholesky().is_none() {
        return Err(Error::Numerical { node, message: format!("{what} is not symmetric positive definite") });
    }
    Ok(())
}

impl LinearGaussianSystem {
    pub fn steps(&self) -> usize {
        self.a.len()
    }

    /// Check shapes and that `P0`, every `R` and the noisy block of every
    /// `Q_k` factor.
    pub fn validate(&self) -> Result<()> {
        let d = self.n + self.q;
        if self.b.len() != self.steps() || self.process.len() != self.steps() {
            return Err(Error::Input("transition, offset and covariance counts differ".into()));
        }
        if self.mu0.len() != d || self.p0.shape() != (d, d) {
            return Err(Error::Input("initial mean or covariance has the wrong shape".into()));
        }
        pd_check(&self.p0, "initial covariance", 0)?;
        for k in 0..self.steps() {
            if self.a[k].shape() != (d, d) || self.b[k].len() != d || self.process[k].shape() != (d, d) {
                return Err(Error::Input(format!("step {k} has the wrong shape")));
            }
            pd_check(&self.process[k].view((0, 0), (self.n, self.n)).into_owned(), "process covariance", k)?;
            let clean_zero = (0..d).all(|i| (0..d).all(|j| (i < self.n && j < self.n) || self.process[k][(i, j)] == 0.0));
            if !clean_zero {
                return Err(Error::Input(format!("process covariance of step {k} drives the clean states")));
            }
        }
        for o in &self.observations {
            if o.node > self.steps() || o.c.ncols() != d || o.y.len() != o.c.nrows() || o.r.shape() != (o.y.len(), o.y.len()) {
                return Err(Error::Input(format!("observation at node {} is inconsistent", o.node)));
            }
            pd_check(&o.r, "measurement covariance", o.node)?;
        }
        Ok(())
    }

    /// Add the observations of a linear-Gaussian measurement model at the
    /// nodes of `grid` matching `data`'s times.
    pub fn observe(&mut self, measurement: &dyn MeasurementModel, data: &Dataset, grid: &Partition, theta: &[f64]) -> Result<()> {
        let (c, r) = measurement
            .linear_gaussian(theta, self.n, self.q)
            .ok_or_else(|| Error::Input("measurement model is not linear-Gaussian".into()))?;
        let tol = 1e-9 * grid.horizon().max(1.0);
        for (i, t) in data.times().iter().enumerate() {
            let node =
                grid.node_index(*t, tol).ok_or_else(|| Error::Input(format!("measurement time {t} is not a grid node")))?;
            self.observations.push(Observation {
                node,
                y: DVector::from_column_slice(data.value(i)),
                c: c.clone(),
                r: r.clone(),
            });
        }
        Ok(())
    }
}

fn joint_jacobian(model: &DynamicsModel, t: f64, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let dims = model.dims();
    let (n, q, vars) = (dims.n, dims.q, dims.vars());
    let (x, z) = s.split_at(n);
    let mut jf = vec![0.0; n * vars];
    let mut jh = vec![0.0; q * vars];
    model.noisy_jacobian(t, x, z, theta, &mut jf);
    model.clean_jacobian(t, x, z, theta, &mut jh);
    DMatrix::from_fn(n + q, n + q, |r, c| if r < n { jf[r * vars + c] } else { jh[(r - n) * vars + c] })
}

/// Euler discretization of an affine model on `grid`:
/// `A_k = I + J delta_k`, `b_k = delta_k (f, h)(t_k, 0)`,
/// `Q_k = [G; 0][G; 0]^T delta_k`. The initial law comes from the prior.
pub fn discretize_linear(
    model: &DynamicsModel,
    prior: &dyn Prior,
    grid: &Partition,
    theta: &[f64],
) -> Result<LinearGaussianSystem> {
    let dims = model.dims();
    let (n, q) = (dims.n, dims.q);
    let d = n + q;
    let (mu0, p0) = prior.gaussian_initial().ok_or_else(|| Error::Input("initial-state prior is not Gaussian".into()))?;
    let probes: Vec<Vec<f64>> =
        vec![vec![0.0; d], (0..d).map(|i| 0.7 - 0.3 * i as f64).collect(), (0..d).map(|i| -1.3 + 0.9 * i as f64).collect()];
    let g = model.diffusion();
    let ggt = g * g.transpose();
    let (mut a, mut b, mut process) = (Vec::new(), Vec::new(), Vec::new());
    let (mut f, mut h) = (vec![0.0; n], vec![0.0; q]);
    for k in 0..grid.intervals() {
        let (t, delta) = (grid.node(k), grid.width(k));
        let j = joint_jacobian(model, t, &probes[0], theta);
        for p in &probes[1..] {
            if (joint_jacobian(model, t, p, theta) - &j).amax() > 1e-10 * (1.0 + j.amax()) {
                return Err(Error::Input(format!("drift is not affine in the state (checked at t = {t})")));
            }
        }
        model.drift_noisy(t, &probes[0][..n], &probes[0][n..], theta, &mut f);
        model.drift_clean(t, &probes[0][..n], &probes[0][n..], theta, &mut h);
        a.push(DMatrix::identity(d, d) + j * delta);
        b.push(DVector::from_iterator(d, f.iter().chain(&h).map(|v| v * delta)));
        let mut qk = DMatrix::zeros(d, d);
        qk.view_mut((0, 0), (n, n)).copy_from(&(&ggt * delta));
        process.push(qk);
    }
    let sys = LinearGaussianSystem { n, q, a, b, process, observations: Vec::new(), mu0, p0 };
    sys.validate()?;
    Ok(sys)
}

/// Posterior means and covariances at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Kalman filter followed by the Rauch–Tung–Striebel backward pass.
pub fn rts_smoother(sys: &LinearGaussianSystem) -> Result<Smoothed> {
    sys.validate()?;
    let (n, d) = (sys.n, sys.n + sys.q);
    let steps = sys.steps();
    let mut order: Vec<&Observation> = sys.observations.iter().collect();
    order.sort_by_key(|o| o.node);
    let mut next_obs = 0;

    let mut filt_m = Vec::with_capacity(steps + 1);
    let mut filt_p = Vec::with_capacity(steps + 1);
    let mut pred_m = Vec::with_capacity(steps + 1);
    let mut pred_p = Vec::with_capacity(steps + 1);
    let (mut m, mut p) = (sys.mu0.clone(), sys.p0.clone());
    for k in 0..=steps {
        if k > 0 {
            m = &sys.a[k - 1] * &m + &sys.b[k - 1];
            p = &sys.a[k - 1] * &p * sys.a[k - 1].transpose() + &sys.process[k - 1];
            for i in n..d {
                p[(i, i)] += CLEAN_JITTER;
            }
            symmetrize(&mut p);
        }
        pred_m.push(m.clone());
        pred_p.push(p.clone());
        while next_obs < order.len() && order[next_obs].node == k {
            let o = order[next_obs];
            let s = &o.c * &p * o.c.transpose() + &o.r;
            let chol = s
                .cholesky()
                .ok_or_else(|| Error::Numerical { node: k, message: "innovation covariance is not positive definite".into() })?;
            let pct = &p * o.c.transpose();
            let gain = chol.solve(&pct.transpose()).transpose();
            m += &gain * (&o.y - &o.c * &m);
            p -= &gain * pct.transpose();
            symmetrize(&mut p);
            next_obs += 1;
        }
        filt_m.push(m.clone());
        filt_p.push(p.clone());
    }

    let mut means = filt_m.clone();
    let mut covs = filt_p.clone();
    for k in (0..steps).rev() {
        let chol = pred_p[k + 1]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical { node: k + 1, message: "predicted covariance is not positive definite".into() })?;
        let cross = &filt_p[k] * sys.a[k].transpose();
        let gain = chol.solve(&cross.transpose()).transpose();
        means[k] = &filt_m[k] + &gain * (&means[k + 1] - &pred_m[k + 1]);
        let mut pk = &filt_p[k] + &gain * (&covs[k + 1] - &pred_p[k + 1]) * gain.transpose();
        symmetrize(&mut pk);
        covs[k] = pk;
    }
    Ok(Smoothed { means, covariances: covs })
}

/// Maximizer of the joint log-density, found by assembling and solving the
/// normal equations in the unknowns `(x_0, .., x_N, z_0)`. Clean states are
/// affine in these through the noiseless recursion.
pub fn dense_map(sys: &LinearGaussianSystem) -> Result<Vec<DVector<f64>>> {
    sys.validate()?;
    let (n, q) = (sys.n, sys.q);
    let d = n + q;
    let steps = sys.steps();
    let dim = (steps + 1) * n + q;
    if dim > DENSE_LIMIT {
        return Err(Error::Input(format!("{dim} unknowns exceed the dense limit of {DENSE_LIMIT}")));
    }
    let inv = |m: &DMatrix<f64>, node: usize| {
        m.clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Numerical { node, message: "covariance is not positive definite".into() })
    };

    // s_k = S_k u + c_k
    let mut zmap = DMatrix::zeros(q, dim);
    for j in 0..q {
        zmap[(j, (steps + 1) * n + j)] = 1.0;
    }
    let mut zoff = DVector::zeros(q);
    let state = |k: usize, zmap: &DMatrix<f64>, zoff: &DVector<f64>| {
        let mut s = DMatrix::zeros(d, dim);
        for i in 0..n {
            s[(i, k * n + i)] = 1.0;
        }
        s.view_mut((n, 0), (q, dim)).copy_from(zmap);
        let mut c = DVector::zeros(d);
        c.rows_mut(n, q).copy_from(zoff);
        (s, c)
    };

    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut add = |l: &DMatrix<f64>, target: &DVector<f64>, w: &DMatrix<f64>| {
        let lt_w = l.transpose() * w;
        h += &lt_w * l;
        g += lt_w * target;
    };
    let mut order: Vec<&Observation> = sys.observations.iter().collect();
    order.sort_by_key(|o| o.node);
    let mut next_obs = 0;
    let mut states = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let (s, c) = state(k, &zmap, &zoff);
        if k == 0 {
            add(&s, &(&sys.mu0 - &c), &inv(&sys.p0, 0)?);
        }
        while next_obs < order.len() && order[next_obs].node == k {
            let o = order[next_obs];
            add(&(&o.c * &s), &(&o.y - &o.c * &c), &inv(&o.r, k)?);
            next_obs += 1;
        }
        if k < steps {
            let ax = sys.a[k].rows(0, n).into_owned();
            let (s1, _) = state(k + 1, &zmap, &zoff);
            let mut l = s1.rows(0, n).into_owned();
            l -= &ax * &s;
            let target = &ax * &c + sys.b[k].rows(0, n);
            add(&l, &target, &inv(&sys.process[k].view((0, 0), (n, n)).into_owned(), k)?);
            let az = sys.a[k].rows(n, q).into_owned();
            zoff = &az * &c + sys.b[k].rows(n, q);
            zmap = &az * &s;
        }
        states.push((s, c));
    }
    let chol = h.cholesky().ok_or_else(|| Error::Numerical { node: 0, message: "normal matrix is singular".into() })?;
    let u = chol.solve(&g);
    Ok(states.into_iter().map(|(s, c)| s * &u + c).collect())
}

/// A random affine instance as both an estimation problem and its
/// discretized linear-Gaussian system.
pub struct LinearInstance {
    pub problem: Problem,
    pub system: LinearGaussianSystem,
}

/// Random stable affine model with `n` noisy and `q` clean states on a
/// uniform grid of `intervals` steps of 0.05, observed at every other node
/// through a random `C` with diagonal `R`.
pub fn random_instance(seed: u64, n: usize, q: usize, intervals: usize) -> Result<LinearInstance> {
    let mut r = rng::stream(seed, 0);
    let d = n + q;
    let mut u = |lo: f64, hi: f64| r.random_range(lo..hi);
    let f = DMatrix::from_fn(n, d, |i, j| if i == j { u(-1.5, -0.5) } else { u(-0.5, 0.5) });
    let hm = DMatrix::from_fn(q, d, |i, j| if n + i == j { u(-1.0, -0.2) } else { u(-0.5, 0.5) });
    let f0 = DVector::from_fn(n, |_, _| u(-0.3, 0.3));
    let h0 = DVector::from_fn(q, |_, _| u(-0.3, 0.3));
    let g = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => u(0.3, 1.0),
        std::cmp::Ordering::Greater => u(-0.3, 0.3),
        std::cmp::Ordering::Less => 0.0,
    });
    let p = 1 + (seed as usize % 2).min(d - 1);
    let c = DMatrix::from_fn(p, d, |_, _| u(-1.0, 1.0));
    let rm = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| u(0.05, 0.3).powi(2)));
    let t_f = 0.05 * intervals as f64;
    let grid = Partition::uniform(t_f, intervals)?;
    let times: Vec<f64> = (0..=intervals).step_by(2).map(|k| grid.node(k)).collect();
    let values: Vec<f64> = (0..times.len() * p).map(|_| u(-1.0, 1.0)).collect();
    let prior = IndependentPrior::new(
        (0..n).map(|_| Marginal::Normal { mean: u(-0.5, 0.5), sd: u(0.3, 1.0) }).collect(),
        (0..q).map(|_| Marginal::Normal { mean: u(-0.5, 0.5), sd: u(0.3, 1.0) }).collect(),
        vec![],
    );
    let model = DynamicsModel::new(Arc::new(LinearDrift::new(f, f0, hm, h0)?), g, ValidityBox::unbounded(d))?;
    let measurement = LinearGaussianMeasurement::new(c, rm)?;
    let data = Dataset::new(times, p, values)?;
    let problem = Problem::new(model, Arc::new(prior), Arc::new(measurement), data, grid, ParamLayout::all_free(0))?;
    let mut system = discretize_linear(&problem.model, problem.prior.as_ref(), &problem.grid, &[])?;
    system.observe(problem.measurement.as_ref(), &problem.data, &problem.grid, &[])?;
    Ok(LinearInstance { problem, system })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_duffing, BenchmarkOptions, MeasurementKind};
    use proptest::prelude::*;
    use rand::Rng;

    fn ou() -> (DynamicsModel, IndependentPrior) {
        let drift =
            LinearDrift::new(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1), DMatrix::zeros(0, 1), DVector::zeros(0))
                .unwrap();
        let model = DynamicsModel::new(Arc::new(drift), DMatrix::identity(1, 1), ValidityBox::unbounded(1)).unwrap();
        (model, IndependentPrior::new(vec![Marginal::Normal { mean: 0.5, sd: 1.0 }], vec![], vec![]))
    }

    fn sup(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn ou_discretization() {
        let (model, prior) = ou();
        let sys = discretize_linear(&model, &prior, &Partition::uniform(1.0, 10).unwrap(), &[]).unwrap();
        assert!((sys.a[3][(0, 0)] - 0.9).abs() < 1e-15);
        assert!((sys.process[3][(0, 0)] - 0.1).abs() < 1e-15);
        assert_eq!(sys.b[3][0], 0.0);
    }

    #[test]
    fn zero_drift_is_identity() {
        let drift = LinearDrift::new(DMatrix::zeros(2, 3), DVector::zeros(2), DMatrix::zeros(1, 3), DVector::zeros(1)).unwrap();
        let model = DynamicsModel::new(Arc::new(drift), DMatrix::identity(2, 2), ValidityBox::unbounded(3)).unwrap();
        let prior = IndependentPrior::new(
            vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; 2],
            vec![Marginal::Normal { mean: 0.0, sd: 1.0 }],
            vec![],
        );
        let sys = discretize_linear(&model, &prior, &Partition::uniform(1.0, 4).unwrap(), &[]).unwrap();
        assert!(sys.a.iter().all(|a| *a == DMatrix::identity(3, 3)));
    }

    #[test]
    fn linear_duffing_matches_hand_assembly() {
        // a = 0, gamma = 0: f = -b z - d x, h = x
        let opts = BenchmarkOptions { forcing: Some(0.0), ..BenchmarkOptions::default() };
        let spec = make_duffing(MeasurementKind::Gaussian, 1.0, &opts).unwrap();
        let grid = Partition::uniform(1.0, 10).unwrap();
        let sys = discretize_linear(&spec.model, spec.prior.as_ref(), &grid, &[0.0, -1.0, 0.2, 0.1]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 - 0.02, 0.1, 0.1, 1.0]);
        assert!((&sys.a[0] - expect).amax() < 1e-14);
        assert!((sys.process[0][(0, 0)] - 0.001).abs() < 1e-16);
        assert_eq!(sys.process[0][(1, 1)], 0.0);
        assert!(sys.b[0].amax() < 1e-15);
        let cubic = discretize_linear(&spec.model, spec.prior.as_ref(), &grid, &[1.0, -1.0, 0.2, 0.1]);
        assert!(matches!(cubic, Err(Error::Input(_))));
    }

    #[test]
    fn prior_only_propagates_the_mean() {
        let (model, prior) = ou();
        let sys = discretize_linear(&model, &prior, &Partition::uniform(1.0, 10).unwrap(), &[]).unwrap();
        let rts = rts_smoother(&sys).unwrap();
        let dense = dense_map(&sys).unwrap();
        for (k, (r, d)) in rts.means.iter().zip(&dense).enumerate() {
            let m = 0.5 * 0.9f64.powi(k as i32);
            assert!((r[0] - m).abs() < 1e-12);
            assert!((d[0] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn nearly_exact_measurement_is_matched() {
        let (model, prior) = ou();
        let mut sys = discretize_linear(&model, &prior, &Partition::uniform(1.0, 10).unwrap(), &[]).unwrap();
        sys.observations.push(Observation {
            node: 6,
            y: DVector::from_element(1, 1.7),
            c: DMatrix::identity(1, 1),
            r: DMatrix::from_element(1, 1, 1e-12),
        });
        let rts = rts_smoother(&sys).unwrap();
        assert!((rts.means[6][0] - 1.7).abs() < 1e-5);
    }

    #[test]
    fn ou_with_fifty_measurements() {
        let (model, prior) = ou();
        let grid = Partition::uniform(5.0, 100).unwrap();
        let mut sys = discretize_linear(&model, &prior, &grid, &[]).unwrap();
        let mut r = rng::stream(9, 0);
        for k in 0..50 {
            sys.observations.push(Observation {
                node: 2 * k + 1,
                y: DVector::from_element(1, r.random_range(-1.0..1.0)),
                c: DMatrix::identity(1, 1),
                r: DMatrix::from_element(1, 1, 0.04),
            });
        }
        let rts = rts_smoother(&sys).unwrap();
        let dense = dense_map(&sys).unwrap();
        assert!(sup(&rts.means, &dense) < 1e-8);
    }

    #[test]
    fn smoother_covariances_are_symmetric() {
        let inst = random_instance(4, 2, 1, 60).unwrap();
        let rts = rts_smoother(&inst.system).unwrap();
        for p in &rts.covariances {
            assert!((p - p.transpose()).norm() <= 1e-10 * p.norm());
        }
    }

    #[test]
    fn inconsistent_systems_are_rejected() {
        let (model, prior) = ou();
        let mut sys = discretize_linear(&model, &prior, &Partition::uniform(1.0, 4).unwrap(), &[]).unwrap();
        sys.process[1][(0, 0)] = -1.0;
        assert!(matches!(rts_smoother(&sys), Err(Error::Numerical { node: 1, .. })));
        let inst = random_instance(1, 2, 0, 2500).unwrap();
        assert!(matches!(dense_map(&inst.system), Err(Error::Input(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn smoother_and_dense_solve_agree(seed in 0u64..10_000, n in 1usize..3, q in 0usize..2, steps in 2usize..50) {
            let inst = random_instance(seed, n, q, steps).unwrap();
            let rts = rts_smoother(&inst.system).unwrap();
            let dense = dense_map(&inst.system).unwrap();
            prop_assert!(sup(&rts.means, &dense) < 1e-8, "{}", sup(&rts.means, &dense));
        }
    }
}
