//! Continuous-time log-posteriors by quadrature, for smooth test paths.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{Partition, PwlPath};
use crate::model::{Dataset, DynamicsModel, MeasurementModel, NodeStates, Prior};

/// A smooth noisy-state path: `t -> (x(t), x'(t))`.
pub type SmoothPath<'a> = &'a dyn Fn(f64) -> (Vec<f64>, Vec<f64>);

/// `ln psi + ln pi - 1/2 int |G^-1 (f - x')|^2 dt - 1/2 int div_x f dt`.
///
/// Both integrals use the composite trapezoid rule on `quad_n` panels; the
/// clean path comes from classical Runge–Kutta with step `t_f / quad_n`.
#[allow(clippy::too_many_arguments)]
pub fn continuous_log_posterior(
    model: &DynamicsModel,
    prior: &dyn Prior,
    measurement: &dyn MeasurementModel,
    data: &Dataset,
    path: SmoothPath<'_>,
    z0: &[f64],
    theta: &[f64],
    t_f: f64,
    quad_n: usize,
) -> Result<f64> {
    functional(model, prior, measurement, data, path, z0, theta, t_f, quad_n, true)
}

/// As [`continuous_log_posterior`] without the divergence integral.
#[allow(clippy::too_many_arguments)]
pub fn continuous_energy_log_posterior(
    model: &DynamicsModel,
    prior: &dyn Prior,
    measurement: &dyn MeasurementModel,
    data: &Dataset,
    path: SmoothPath<'_>,
    z0: &[f64],
    theta: &[f64],
    t_f: f64,
    quad_n: usize,
) -> Result<f64> {
    functional(model, prior, measurement, data, path, z0, theta, t_f, quad_n, false)
}

#[allow(clippy::too_many_arguments)]
fn functional(
    model: &DynamicsModel,
    prior: &dyn Prior,
    measurement: &dyn MeasurementModel,
    data: &Dataset,
    path: SmoothPath<'_>,
    z0: &[f64],
    theta: &[f64],
    t_f: f64,
    quad_n: usize,
    with_divergence: bool,
) -> Result<f64> {
    if quad_n == 0 {
        return Err(Error::Input("quadrature needs at least one panel".into()));
    }
    let d = model.dims();
    let (n, q) = (d.n, d.q);
    let grid = Partition::uniform(t_f, quad_n)?;
    let ginv = model.diffusion_inv()?;
    let x0 = path(0.0).0;
    let lp = prior.log_density(&x0, z0, theta);
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }

    let hstep = t_f / quad_n as f64;
    let clean = |t: f64, z: &[f64]| {
        let mut out = vec![0.0; q];
        model.drift_clean(t, &path(t).0, z, theta, &mut out);
        out
    };
    let mut z = Vec::with_capacity((quad_n + 1) * q);
    z.extend_from_slice(z0);
    let mut integral = 0.0;
    let mut f = vec![0.0; n];
    for k in 0..=quad_n {
        let t = grid.node(k);
        let zk = z[k * q..(k + 1) * q].to_vec();
        let (x, xdot) = path(t);
        model.drift_noisy(t, &x, &zk, theta, &mut f);
        let u = DVector::from_iterator(n, f.iter().zip(&xdot).map(|(a, b)| a - b));
        let mut g = -0.5 * (ginv * u).norm_squared();
        if with_divergence {
            g -= 0.5 * model.divergence(t, &x, &zk, theta);
        }
        let w = if k == 0 || k == quad_n { 0.5 } else { 1.0 };
        integral += w * hstep * g;
        if k < quad_n {
            let k1 = clean(t, &zk);
            let y2: Vec<f64> = (0..q).map(|i| zk[i] + 0.5 * hstep * k1[i]).collect();
            let k2 = clean(t + 0.5 * hstep, &y2);
            let y3: Vec<f64> = (0..q).map(|i| zk[i] + 0.5 * hstep * k2[i]).collect();
            let k3 = clean(t + 0.5 * hstep, &y3);
            let y4: Vec<f64> = (0..q).map(|i| zk[i] + hstep * k3[i]).collect();
            let k4 = clean(grid.node(k + 1), &y4);
            z.extend((0..q).map(|i| zk[i] + hstep / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])));
        }
    }

    let z_path = PwlPath::new(grid, q, z)?;
    let mut xs = Vec::with_capacity(data.len() * n);
    let mut zs = Vec::with_capacity(data.len() * q);
    for t in data.times() {
        xs.extend(path(*t).0);
        zs.extend(z_path.eval(*t)?);
    }
    let ll = measurement.log_likelihood(data, &NodeStates { n, q, x: &xs, z: &zs }, theta)?;
    Ok(lp + ll + integral)
}
