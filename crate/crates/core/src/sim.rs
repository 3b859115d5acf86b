//! Seeded simulation of the SDE system and of measurement datasets.
//!
//! The random generator is ChaCha20 seeded with a 64-bit seed, one stream per
//! purpose (see [`crate::rng`]); normals use the ziggurat sampler. Replicate
//! `i` of a batch uses seed `base + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Partition, PwlPath};
use crate::model::{BenchmarkSpec, Dataset, DynamicsModel, NodeStates};
use crate::rng::{self, standard_normal};

/// Integration scheme of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    /// Strong order-1.5 Taylor scheme for additive noise.
    Order15Additive,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::Order15Additive => "order15_additive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub h_sim: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { h_sim: 0.005, scheme: Scheme::Order15Additive, seed: 0 }
    }
}

/// A simulated sample path on the dense simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub n: usize,
    pub q: usize,
    /// Row-major `len x n`.
    pub x: Vec<f64>,
    /// Row-major `len x q`.
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    pub h_sim: f64,
    /// First time the state was outside the model's validity box.
    pub left_validity_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z[k * self.q..(k + 1) * self.q]
    }

    fn partition(&self) -> Result<Partition> {
        Partition::uniform(self.horizon(), self.len() - 1)
    }

    pub fn x_path(&self) -> Result<PwlPath> {
        PwlPath::new(self.partition()?, self.n, self.x.clone())
    }

    pub fn z_path(&self) -> Result<PwlPath> {
        PwlPath::new(self.partition()?, self.q, self.z.clone())
    }

    /// Dense-grid index of time `t`, which must be a grid node.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.h_sim).round();
        if k < 0.0 || k as usize >= self.len() || (self.times[k as usize] - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Input(format!("time {t} is not on the simulation grid")));
        }
        Ok(k as usize)
    }
}

fn grid_steps(span: f64, h: f64, what: &str) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("simulation step must be positive, got {h}")));
    }
    let steps = (span / h).round();
    if steps < 1.0 || (steps * h - span).abs() > 1e-9 * span {
        return Err(Error::Input(format!("simulation step {h} does not divide the {what} {span}")));
    }
    Ok(steps as usize)
}

/// Stacked drift `a(t, y) = [f; h]` with `y = [x; z]`.
fn stacked_drift(model: &DynamicsModel, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
    let n = model.dims().n;
    let (x, z) = y.split_at(n);
    let (fo, ho) = out.split_at_mut(n);
    model.drift_noisy(t, x, z, theta, fo);
    model.drift_clean(t, x, z, theta, ho);
}

/// One Euler–Maruyama step: `y + a h + [G; 0] dw`.
pub fn euler_maruyama_step(model: &DynamicsModel, t: f64, y: &[f64], theta: &[f64], h: f64, dw: &[f64]) -> Vec<f64> {
    let n = model.dims().n;
    let mut a = vec![0.0; y.len()];
    stacked_drift(model, t, y, theta, &mut a);
    let g = model.diffusion();
    let mut next: Vec<f64> = y.iter().zip(&a).map(|(v, d)| v + d * h).collect();
    for i in 0..n {
        for j in 0..n {
            next[i] += g[(i, j)] * dw[j];
        }
    }
    next
}

/// One step of the order-1.5 strong Taylor scheme for additive noise,
///
/// ```text
/// y + a h + B dW + sum_j (L^j a) dZ_j + (L^0 a) h^2 / 2,
/// ```
///
/// with `B = [G; 0]`, `dZ_j` the double integral of `W_j` over the step,
/// `L^j a = J b_j` and `L^0 a = a_t + J a + 1/2 sum_j D^2 a[b_j, b_j]`. All
/// derivatives are central differences of the (clamped) drift.
pub fn order15_step(model: &DynamicsModel, t: f64, y: &[f64], theta: &[f64], h: f64, dw: &[f64], dz: &[f64]) -> Vec<f64> {
    let d = y.len();
    let n = model.dims().n;
    let g = model.diffusion();
    let mut a = vec![0.0; d];
    stacked_drift(model, t, y, theta, &mut a);
    let scale = 1e-4 * y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut ap = vec![0.0; d];
    let mut am = vec![0.0; d];
    let probe = |dir: &[f64], tshift: f64, ap: &mut [f64], am: &mut [f64]| -> f64 {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 && tshift == 0.0 {
            ap.fill(0.0);
            am.fill(0.0);
            return 0.0;
        }
        let eps = if norm > 0.0 { scale / norm } else { scale };
        let yp: Vec<f64> = y.iter().zip(dir).map(|(v, u)| v + eps * u).collect();
        let ym: Vec<f64> = y.iter().zip(dir).map(|(v, u)| v - eps * u).collect();
        stacked_drift(model, t + eps * tshift, &yp, theta, ap);
        stacked_drift(model, t - eps * tshift, &ym, theta, am);
        eps
    };

    let zero = vec![0.0; d];
    let mut l0 = vec![0.0; d];
    // a_t
    let eps = probe(&zero, 1.0, &mut ap, &mut am);
    for i in 0..d {
        l0[i] += (ap[i] - am[i]) / (2.0 * eps);
    }
    // J a
    let eps = probe(&a, 0.0, &mut ap, &mut am);
    if eps > 0.0 {
        for i in 0..d {
            l0[i] += (ap[i] - am[i]) / (2.0 * eps);
        }
    }
    let mut next: Vec<f64> = (0..d).map(|i| y[i] + a[i] * h).collect();
    for j in 0..n {
        let b: Vec<f64> = (0..d).map(|i| if i < n { g[(i, j)] } else { 0.0 }).collect();
        for i in 0..n {
            next[i] += g[(i, j)] * dw[j];
        }
        let eps = probe(&b, 0.0, &mut ap, &mut am);
        if eps == 0.0 {
            continue;
        }
        for i in 0..d {
            let lj = (ap[i] - am[i]) / (2.0 * eps);
            next[i] += lj * dz[j];
            l0[i] += 0.5 * (ap[i] - 2.0 * a[i] + am[i]) / (eps * eps);
        }
    }
    for i in 0..d {
        next[i] += 0.5 * l0[i] * h * h;
    }
    next
}

/// Simulate the system from `(x0, z0)` over `[0, t_f]` on the grid `k h_sim`.
pub fn simulate(model: &DynamicsModel, x0: &[f64], z0: &[f64], theta: &[f64], t_f: f64, cfg: &SimConfig) -> Result<Trajectory> {
    let dims = model.dims();
    if x0.len() != dims.n || z0.len() != dims.q || theta.len() != dims.m {
        return Err(Error::Input("initial state or parameter vector has the wrong length".into()));
    }
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t_f}")));
    }
    let steps = grid_steps(t_f, cfg.h_sim, "horizon")?;
    let grid = Partition::uniform(t_f, steps)?;
    let h = cfg.h_sim;
    let (n, q) = (dims.n, dims.q);
    let mut rng = rng::stream(cfg.seed, rng::STREAM_PROCESS);
    let mut y: Vec<f64> = x0.iter().chain(z0).copied().collect();
    let mut x = Vec::with_capacity((steps + 1) * n);
    let mut z = Vec::with_capacity((steps + 1) * q);
    x.extend_from_slice(x0);
    z.extend_from_slice(z0);
    let mut left = (!model.validity().contains(x0, z0)).then_some(0.0);
    let sqrt_h = h.sqrt();
    let mut dw = vec![0.0; n];
    let mut dz = vec![0.0; n];
    for k in 0..steps {
        let t = grid.node(k);
        y = match cfg.scheme {
            Scheme::EulerMaruyama => {
                for w in dw.iter_mut() {
                    *w = sqrt_h * standard_normal(&mut rng);
                }
                euler_maruyama_step(model, t, &y, theta, h, &dw)
            }
            Scheme::Order15Additive => {
                for j in 0..n {
                    let u1 = standard_normal(&mut rng);
                    let u2 = standard_normal(&mut rng);
                    dw[j] = sqrt_h * u1;
                    dz[j] = 0.5 * h * sqrt_h * (u1 + u2 / 3f64.sqrt());
                }
                order15_step(model, t, &y, theta, h, &dw, &dz)
            }
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { step: k, message: "simulated state is not finite".into() });
        }
        let (xs, zs) = y.split_at(n);
        if left.is_none() && !model.validity().contains(xs, zs) {
            left = Some(grid.node(k + 1));
        }
        x.extend_from_slice(xs);
        z.extend_from_slice(zs);
    }
    Ok(Trajectory {
        times: grid.nodes(),
        n,
        q,
        x,
        z,
        theta: theta.to_vec(),
        seed: cfg.seed,
        scheme: cfg.scheme,
        h_sim: h,
        left_validity_at: left,
    })
}

/// Simulate a benchmark at its nominal parameters and sample its measurements.
///
/// The initial state is drawn from the prior (stream 0), the path from
/// stream 1 and the measurement noise from stream 2 of `seed`.
pub fn generate_dataset(spec: &BenchmarkSpec, seed: u64, cfg: &SimConfig) -> Result<(Trajectory, Dataset)> {
    let stride = grid_steps(spec.t_s, cfg.h_sim, "sampling period")?;
    let mut prior_rng = rng::stream(seed, rng::STREAM_PRIOR);
    let (x0, z0, _) = spec.prior.sample(&mut prior_rng);
    let cfg = SimConfig { seed, ..*cfg };
    let traj = simulate(&spec.model, &x0, &z0, &spec.theta_nominal, spec.t_f, &cfg)?;
    let times = spec.sample_times();
    let (n, q) = (traj.n, traj.q);
    let mut xs = Vec::with_capacity(times.len() * n);
    let mut zs = Vec::with_capacity(times.len() * q);
    for k in 0..times.len() {
        xs.extend_from_slice(traj.x_at(k * stride));
        zs.extend_from_slice(traj.z_at(k * stride));
    }
    let mut meas_rng = rng::stream(seed, rng::STREAM_MEASUREMENT);
    let states = NodeStates { n, q, x: &xs, z: &zs };
    let y = spec.measurement.sample(&times, &states, &spec.theta_nominal, &mut meas_rng)?;
    Ok((traj, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_duffing, BenchmarkOptions, DuffingDrift, LinearDrift, MeasurementKind, ValidityBox};
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    fn ou() -> DynamicsModel {
        let drift =
            LinearDrift::new(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1), DMatrix::zeros(0, 1), DVector::zeros(0))
                .unwrap();
        DynamicsModel::new(Arc::new(drift), DMatrix::identity(1, 1), ValidityBox::unbounded(1)).unwrap()
    }

    fn rk4(model: &DynamicsModel, y0: &[f64], theta: &[f64], t_f: f64, steps: usize, every: usize) -> Vec<Vec<f64>> {
        let h = t_f / steps as f64;
        let d = y0.len();
        let mut y = y0.to_vec();
        let mut out = vec![y.clone()];
        let f = |t: f64, y: &[f64]| {
            let mut a = vec![0.0; d];
            stacked_drift(model, t, y, theta, &mut a);
            a
        };
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = f(t, &y);
            let y2: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k1[i]).collect();
            let k2 = f(t + 0.5 * h, &y2);
            let y3: Vec<f64> = (0..d).map(|i| y[i] + 0.5 * h * k2[i]).collect();
            let k3 = f(t + 0.5 * h, &y3);
            let y4: Vec<f64> = (0..d).map(|i| y[i] + h * k3[i]).collect();
            let k4 = f(t + h, &y4);
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if (k + 1) % every == 0 {
                out.push(y.clone());
            }
        }
        out
    }

    #[test]
    fn noiseless_duffing_matches_fine_ode_solution() {
        let model = DynamicsModel::noiseless(Arc::new(DuffingDrift { gamma: 0.3 }), ValidityBox::symmetric(2, 10.0)).unwrap();
        let theta = [1.0, -1.0, 0.2, 0.1];
        let traj = simulate(&model, &[0.3], &[-0.5], &theta, 10.0, &SimConfig::default()).unwrap();
        let reference = rk4(&model, &[0.3, -0.5], &theta, 10.0, 1_000_000, 500);
        assert_eq!(reference.len(), traj.len());
        let err = reference
            .iter()
            .enumerate()
            .map(|(k, r)| (traj.x_at(k)[0] - r[0]).abs().max((traj.z_at(k)[0] - r[1]).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "sup-norm error {err}");
    }

    #[test]
    fn clean_increments_follow_integrated_drift() {
        let model = DynamicsModel::noiseless(Arc::new(DuffingDrift { gamma: 0.3 }), ValidityBox::symmetric(2, 10.0)).unwrap();
        let traj = simulate(&model, &[0.3], &[-0.5], &[1.0, -1.0, 0.2, 0.1], 5.0, &SimConfig::default()).unwrap();
        let h = traj.h_sim;
        let integral: f64 = (0..traj.len() - 1).map(|k| 0.5 * h * (traj.x_at(k)[0] + traj.x_at(k + 1)[0])).sum();
        let dz = traj.z_at(traj.len() - 1)[0] - traj.z_at(0)[0];
        assert!((dz - integral).abs() < 1e-4, "{dz} vs {integral}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = make_duffing(MeasurementKind::Gaussian, 5.0, &BenchmarkOptions::default()).unwrap();
        let cfg = SimConfig::default();
        let a = generate_dataset(&spec, 42, &cfg).unwrap();
        let b = generate_dataset(&spec, 42, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, 43, &cfg).unwrap();
        assert_ne!(a.1, c.1);
        assert_ne!(a.0.x, c.0.x);
    }

    #[test]
    fn rejects_step_not_dividing_sampling_period() {
        let spec = make_duffing(MeasurementKind::Gaussian, 5.0, &BenchmarkOptions::default()).unwrap();
        let cfg = SimConfig { h_sim: 0.003, ..SimConfig::default() };
        assert!(matches!(generate_dataset(&spec, 1, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn leaving_the_validity_box_is_flagged() {
        let model = DynamicsModel::new(
            Arc::new(DuffingDrift { gamma: 0.3 }),
            DMatrix::from_element(1, 1, 0.1),
            ValidityBox::symmetric(2, 0.5),
        )
        .unwrap();
        let traj = simulate(&model, &[2.0], &[0.0], &[1.0, -1.0, 0.2, 0.1], 1.0, &SimConfig::default()).unwrap();
        assert_eq!(traj.left_validity_at, Some(0.0));
    }

    /// Moments of X_1 for dX = -X dt + dW, X_0 = 1.
    fn ou_moments(scheme: Scheme) -> (f64, f64, usize) {
        let model = ou();
        let paths = 10_000;
        let finals: Vec<f64> = (0..paths)
            .map(|i| {
                let cfg = SimConfig { h_sim: 0.005, scheme, seed: rng::replicate_seed(100, i as u64) };
                let tr = simulate(&model, &[1.0], &[], &[], 1.0, &cfg).unwrap();
                tr.x_at(tr.len() - 1)[0]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / paths as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (paths - 1) as f64;
        (mean, var, paths)
    }

    #[test]
    fn ou_moments_within_three_standard_errors() {
        let m = (-1.0f64).exp();
        let v = (1.0 - (-2.0f64).exp()) / 2.0;
        for scheme in [Scheme::EulerMaruyama, Scheme::Order15Additive] {
            let (mean, var, paths) = ou_moments(scheme);
            let se_mean = (v / paths as f64).sqrt();
            let se_var = v * (2.0 / (paths - 1) as f64).sqrt();
            assert!((mean - m).abs() < 3.0 * se_mean, "{scheme:?} mean {mean}");
            assert!((var - v).abs() < 3.0 * se_var, "{scheme:?} var {var}");
        }
    }

    /// Fine Brownian increments on `[0, 1]`, then per-step coarse (dW, dZ).
    fn coarse_noise(fine: &[f64], hf: f64, ratio: usize) -> Vec<(f64, f64)> {
        fine.chunks(ratio)
            .map(|c| {
                let mut w = 0.0;
                let mut zint = 0.0;
                for dw in c {
                    zint += (w + 0.5 * dw) * hf;
                    w += dw;
                }
                (w, zint)
            })
            .collect()
    }

    #[test]
    fn weak_and_strong_errors_against_common_noise_reference() {
        let model = ou();
        let hf: f64 = 0.000625;
        let fine_steps = 1600;
        let paths = 4000;
        let hs = [(0.02, 32), (0.01, 16), (0.005, 8)];
        let mut mean_err = [0.0; 3];
        let mut sq_err = [0.0; 3];
        let mut strong_em = 0.0;
        let mut strong_15 = 0.0;
        let mut r = rng::stream(9, rng::STREAM_PROCESS);
        for _ in 0..paths {
            let fine: Vec<f64> = (0..fine_steps).map(|_| hf.sqrt() * standard_normal(&mut r)).collect();
            let mut xr = vec![1.0];
            for (k, dw) in fine.iter().enumerate() {
                xr = euler_maruyama_step(&model, k as f64 * hf, &xr, &[], hf, &[*dw]);
            }
            for (j, (h, ratio)) in hs.iter().enumerate() {
                let mut xe = vec![1.0];
                let mut x15 = vec![1.0];
                for (k, (dw, dz)) in coarse_noise(&fine, hf, *ratio).into_iter().enumerate() {
                    let t = k as f64 * h;
                    xe = euler_maruyama_step(&model, t, &xe, &[], *h, &[dw]);
                    x15 = order15_step(&model, t, &x15, &[], *h, &[dw], &[dz]);
                }
                mean_err[j] += (xe[0] - xr[0]) / paths as f64;
                sq_err[j] += (xe[0] * xe[0] - xr[0] * xr[0]) / paths as f64;
                if j == 1 {
                    strong_em += (xe[0] - xr[0]).abs() / paths as f64;
                    strong_15 += (x15[0] - xr[0]).abs() / paths as f64;
                }
            }
        }
        assert!(mean_err[0].abs() > mean_err[1].abs() && mean_err[1].abs() > mean_err[2].abs(), "{mean_err:?}");
        assert!(sq_err[0].abs() > sq_err[1].abs() && sq_err[1].abs() > sq_err[2].abs(), "{sq_err:?}");
        assert!(strong_15 < strong_em, "order 1.5 {strong_15} vs Euler {strong_em}");
    }
}
