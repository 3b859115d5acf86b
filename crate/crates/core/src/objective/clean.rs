//! Clean-state recursions driven by a noisy-state path.

use crate::error::{Error, Result};
use crate::grid::{Partition, PwlPath};
use crate::model::DynamicsModel;

/// Stopping rule for the implicit trapezoidal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Iteration stops when successive iterates are closer than
    /// `rel_tol * (1 + |z_k|)`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_iter: 50 }
    }
}

/// Trapezoidal clean path with fixed-point statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanPath {
    pub path: PwlPath,
    /// Largest Picard iteration count over all steps.
    pub max_iterations: usize,
    /// Largest final successive-iterate distance over all steps.
    pub max_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_finite(step: usize, v: &[f64]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { step, message: "clean drift returned a non-finite value".into() })
    }
}

/// `z_{k+1} = z_k + delta_k h(t_k, x_k, z_k)` on the nodes of `grid`.
pub(crate) fn euler_nodes(model: &DynamicsModel, grid: &Partition, x: &[f64], z0: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    let (n, q) = (model.dims().n, model.dims().q);
    let mut z = Vec::with_capacity(grid.len() * q);
    z.extend_from_slice(z0);
    let mut h = vec![0.0; q];
    for k in 0..grid.intervals() {
        let zk = &z[k * q..(k + 1) * q];
        model.drift_clean(grid.node(k), &x[k * n..(k + 1) * n], zk, theta, &mut h);
        check_finite(k, &h)?;
        let d = grid.width(k);
        let next: Vec<f64> = zk.iter().zip(&h).map(|(a, b)| a + d * b).collect();
        z.extend(next);
    }
    Ok(z)
}

/// Trapezoidal recursion solved per step by Picard iteration. Returns the
/// node values, the largest iteration count and the largest final residual.
pub(crate) fn trapezoidal_nodes(
    model: &DynamicsModel,
    grid: &Partition,
    x: &[f64],
    z0: &[f64],
    theta: &[f64],
    opts: &PicardOptions,
) -> Result<(Vec<f64>, usize, f64)> {
    let (n, q) = (model.dims().n, model.dims().q);
    let mut z = Vec::with_capacity(grid.len() * q);
    z.extend_from_slice(z0);
    let mut hk = vec![0.0; q];
    let mut h1 = vec![0.0; q];
    let (mut max_it, mut max_res) = (0usize, 0.0f64);
    for k in 0..grid.intervals() {
        let zk = z[k * q..(k + 1) * q].to_vec();
        let d = grid.width(k);
        let t1 = grid.node(k + 1);
        let x1 = &x[(k + 1) * n..(k + 2) * n];
        model.drift_clean(grid.node(k), &x[k * n..(k + 1) * n], &zk, theta, &mut hk);
        check_finite(k, &hk)?;
        let tol = opts.rel_tol * (1.0 + norm(&zk));
        let mut cur = zk.clone();
        let mut done = None;
        let mut res = f64::INFINITY;
        for it in 1..=opts.max_iter {
            model.drift_clean(t1, x1, &cur, theta, &mut h1);
            check_finite(k, &h1)?;
            let next: Vec<f64> = (0..q).map(|i| zk[i] + 0.5 * d * (hk[i] + h1[i])).collect();
            res = next.iter().zip(&cur).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            cur = next;
            if res < tol || q == 0 {
                done = Some(it);
                break;
            }
        }
        let it = done.ok_or(Error::FixedPoint { step: k, residual: res })?;
        max_it = max_it.max(it);
        max_res = max_res.max(res);
        z.extend(cur);
    }
    Ok((z, max_it, max_res))
}

fn check_path(model: &DynamicsModel, x: &PwlPath, z0: &[f64], theta: &[f64]) -> Result<()> {
    let d = model.dims();
    if x.dim() != d.n || z0.len() != d.q || theta.len() != d.m {
        return Err(Error::Input("path, initial clean state or parameters have the wrong dimension".into()));
    }
    Ok(())
}

/// Euler clean path: `z(t_{k+1}) = z(t_k) + h(t_k, x(t_k), z(t_k)) delta_k`.
pub fn clean_path_euler(model: &DynamicsModel, x: &PwlPath, z0: &[f64], theta: &[f64]) -> Result<PwlPath> {
    check_path(model, x, z0, theta)?;
    let grid = x.partition();
    let z = euler_nodes(model, grid, x.values(), z0, theta)?;
    PwlPath::new(grid.clone(), z0.len(), z)
}

/// Trapezoidal clean path: each step solves
/// `z_{k+1} = z_k + (h_k + h(t_{k+1}, x_{k+1}, z_{k+1})) delta_k / 2`
/// by Picard iteration started at `z_k`.
pub fn clean_path_trapezoidal(
    model: &DynamicsModel,
    x: &PwlPath,
    z0: &[f64],
    theta: &[f64],
    opts: &PicardOptions,
) -> Result<CleanPath> {
    check_path(model, x, z0, theta)?;
    let grid = x.partition();
    if model.trapezoid_condition(grid.mesh()) == Some(false) {
        return Err(Error::Domain(format!("mesh {} too coarse for the contraction condition (L_f + L_h) mesh < 2", grid.mesh())));
    }
    let (z, max_iterations, max_residual) = trapezoidal_nodes(model, grid, x.values(), z0, theta, opts)?;
    Ok(CleanPath { path: PwlPath::new(grid.clone(), z0.len(), z)?, max_iterations, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, Drift, DuffingDrift, ValidityBox};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    /// `f = 0`, `h = a z + c x`.
    struct Lin {
        a: f64,
        c: f64,
    }
    impl Drift for Lin {
        fn dims(&self) -> Dims {
            Dims::new(1, 1, 0)
        }
        fn noisy(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn clean(&self, _t: f64, x: &[f64], z: &[f64], _th: &[f64], out: &mut [f64]) {
            out[0] = self.a * z[0] + self.c * x[0];
        }
    }

    fn lin(a: f64, c: f64) -> DynamicsModel {
        DynamicsModel::new(Arc::new(Lin { a, c }), DMatrix::identity(1, 1), ValidityBox::unbounded(2)).unwrap()
    }

    fn duffing() -> DynamicsModel {
        DynamicsModel::new(
            Arc::new(DuffingDrift { gamma: 0.3 }),
            DMatrix::from_element(1, 1, 0.1),
            ValidityBox::symmetric(2, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn euler_is_exact_for_constant_integrand() {
        let x = PwlPath::from_fn(Partition::uniform(1.0, 10).unwrap(), 1, |_| vec![1.0]);
        let z = clean_path_euler(&lin(0.0, 1.0), &x, &[0.0], &[]).unwrap();
        for k in 0..=10 {
            assert!((z.node_value(k)[0] - k as f64 / 10.0).abs() < 1e-15);
        }
        let z = clean_path_euler(&lin(0.0, 0.0), &x, &[0.7], &[]).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.7));
    }

    #[test]
    fn trapezoidal_linear_fixed_point() {
        let x = PwlPath::from_fn(Partition::uniform(0.1, 1).unwrap(), 1, |_| vec![0.0]);
        let c = clean_path_trapezoidal(&lin(1.0, 0.0), &x, &[1.0], &[], &PicardOptions::default()).unwrap();
        assert!((c.path.node_value(1)[0] - 1.05 / 0.95).abs() < 1e-12);
        assert!(c.max_iterations <= 50);
        let c = clean_path_trapezoidal(&lin(0.0, 0.0), &x, &[1.0], &[], &PicardOptions::default()).unwrap();
        assert_eq!(c.max_iterations, 1);
        assert_eq!(c.path.node_value(1)[0], 1.0);
    }

    #[test]
    fn non_contracting_step_is_reported() {
        let x = PwlPath::from_fn(Partition::uniform(1.0, 1).unwrap(), 1, |_| vec![0.0]);
        let err = clean_path_trapezoidal(&lin(5.0, 0.0), &x, &[1.0], &[], &PicardOptions::default()).unwrap_err();
        assert!(matches!(err, Error::FixedPoint { step: 0, .. }));
        let hinted = lin(5.0, 0.0).with_lipschitz_hint(0.0, 5.0);
        assert!(matches!(clean_path_trapezoidal(&hinted, &x, &[1.0], &[], &PicardOptions::default()), Err(Error::Domain(_))));
    }

    fn end_error(delta: f64, trapezoidal: bool) -> f64 {
        let t_f = 3.0;
        let grid = Partition::uniform(t_f, (t_f / delta).round() as usize).unwrap();
        let x = PwlPath::from_fn(grid, 1, |t| vec![t.cos()]);
        let th = [1.0, -1.0, 0.2, 0.1];
        let z = if trapezoidal {
            clean_path_trapezoidal(&duffing(), &x, &[0.0], &th, &PicardOptions::default()).unwrap().path
        } else {
            clean_path_euler(&duffing(), &x, &[0.0], &th).unwrap()
        };
        (z.eval(t_f).unwrap()[0] - t_f.sin()).abs()
    }

    #[test]
    fn euler_clean_path_is_first_order() {
        let r = end_error(0.01, false) / end_error(0.005, false);
        assert!((r - 2.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn trapezoidal_clean_path_is_second_order() {
        let r = end_error(0.01, true) / end_error(0.005, true);
        assert!((r - 4.0).abs() < 0.2, "ratio {r}");
    }
}
