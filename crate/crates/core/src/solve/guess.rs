//! Starting point from a smoothing fit of the measurements.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Partition;
use crate::model::{DynamicsModel, Prior};
use crate::objective::{DecisionVector, ParamLayout};

/// Penalty weights tried by generalized cross-validation.
pub const GCV_GRID: [f64; 10] = [1e-1, 1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8];

/// Penalized least-squares fit
/// `min |y - s|^2 + lambda |D s|^2`, `D` the second divided differences
/// scaled by the squared mean spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub values: Vec<f64>,
    pub lambda: f64,
    pub gcv: f64,
}

fn second_differences(t: &[f64]) -> DMatrix<f64> {
    let n = t.len();
    let hbar = (t[n - 1] - t[0]) / (n - 1) as f64;
    let mut d = DMatrix::zeros(n - 2, n);
    for i in 0..n - 2 {
        let (h0, h1) = (t[i + 1] - t[i], t[i + 2] - t[i + 1]);
        let s = hbar * hbar * 2.0 / (h0 + h1);
        d[(i, i)] = s / h0;
        d[(i, i + 1)] = -s * (1.0 / h0 + 1.0 / h1);
        d[(i, i + 2)] = s / h1;
    }
    d
}

/// Fit with the penalty weight from [`GCV_GRID`] that minimizes
/// `N RSS / (N - tr H)^2`. Ties go to the smaller weight.
pub fn whittaker_gcv(t: &[f64], y: &[f64]) -> Result<Smoothed> {
    let n = t.len();
    if n < 4 || y.len() != n {
        return Err(Error::Input(format!("smoothing needs at least 4 measurements, got {n}")));
    }
    let d = second_differences(t);
    let dtd = d.transpose() * &d;
    let yv = DVector::from_column_slice(y);
    let mut best: Option<Smoothed> = None;
    for &lambda in &GCV_GRID {
        let a = DMatrix::identity(n, n) + &dtd * lambda;
        let chol =
            a.cholesky().ok_or_else(|| Error::Numerical { node: 0, message: "smoother matrix not positive definite".into() })?;
        let s = chol.solve(&yv);
        let trace = chol.inverse().trace();
        let rss = (&yv - &s).norm_squared();
        let denom = n as f64 - trace;
        let gcv = n as f64 * rss / (denom * denom);
        if best.as_ref().is_none_or(|b| gcv < b.gcv) {
            best = Some(Smoothed { values: s.as_slice().to_vec(), lambda, gcv });
        }
    }
    Ok(best.unwrap())
}

/// Natural cubic interpolating spline.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(t: &[f64], y: &[f64]) -> Result<Self> {
        let n = t.len();
        if n < 2 || y.len() != n || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("spline knots must be strictly increasing, at least two".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let k = n - 2;
            let (mut diag, mut rhs) = (vec![0.0; k], vec![0.0; k]);
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let (h0, h1) = (t[i + 1] - t[i], t[i + 2] - t[i + 1]);
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
                if i > 0 {
                    let w = h0 / diag[i - 1];
                    diag[i] -= w * upper[i - 1];
                    rhs[i] -= w * rhs[i - 1];
                }
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Ok(Self { t: t.to_vec(), y: y.to_vec(), m })
    }

    /// Value, first and second derivative at `s` (extrapolated linearly in
    /// the second derivative outside the knots).
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let n = self.t.len();
        let i = match self.t.binary_search_by(|p| p.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - s) / h, (s - t0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + h / 6.0 * (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1);
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }
}

/// True when the model has one noisy and one clean state with `h = x`.
pub fn has_scalar_shape(model: &DynamicsModel, theta: &[f64]) -> bool {
    let d = model.dims();
    if d.n != 1 || d.q != 1 {
        return false;
    }
    let mut out = [0.0];
    [(0.0, 0.3, -0.2), (1.7, -1.1, 0.9), (3.1, 2.5, 0.4)].iter().all(|&(t, x, z)| {
        model.drift_clean(t, &[x], &[z], theta, &mut out);
        (out[0] - x).abs() <= 1e-12 * (1.0 + x.abs())
    })
}

/// Starting decision vector for a scalar `(x, z)` model with `h = x` whose
/// measurements observe `z`.
///
/// `z` is the smoothing fit at the nodes and `x` its derivative. Free
/// parameters entering the drift linearly are fitted by least squares of the
/// second derivative onto the drift regressors; the rest start at the prior
/// guess. Fixed parameters keep their values from `layout`.
pub fn initial_guess(
    times: &[f64],
    y: &[f64],
    grid: &Partition,
    model: &DynamicsModel,
    prior: &dyn Prior,
    layout: &ParamLayout,
) -> Result<DecisionVector> {
    let m = model.dims().m;
    let known = layout.expand(&[]);
    if layout.m() != m {
        return Err(Error::Input(format!("parameter vector must have {m} entries")));
    }
    if times.len() < 4 {
        return Err(Error::Input(format!("initial guess needs at least 4 measurements, got {}", times.len())));
    }
    let mut theta: Vec<f64> = (0..m).map(|i| if layout.is_free(i) { prior.theta_guess(i) } else { known[i] }).collect();
    if !has_scalar_shape(model, &theta) {
        return Err(Error::Input("spline initial guess needs n = q = 1 with h = x; supply a starting vector instead".into()));
    }
    let fit = whittaker_gcv(times, y)?;
    let spline = CubicSpline::natural(times, &fit.values)?;
    let at_nodes: Vec<(f64, f64, f64)> = grid.nodes().iter().map(|t| spline.eval(*t)).collect();
    let x: Vec<f64> = at_nodes.iter().map(|p| p.1).collect();
    let z0 = vec![at_nodes[0].0];

    if let Some(first) = model.regression(times[0], &[0.0], &[0.0]) {
        let cols: Vec<usize> = first.theta_indices.iter().copied().filter(|i| layout.is_free(*i)).collect();
        if !cols.is_empty() {
            let mut a = DMatrix::zeros(times.len(), cols.len());
            let mut b = DVector::zeros(times.len());
            for (r, t) in times.iter().enumerate() {
                let (s, ds, dds) = spline.eval(*t);
                let reg = model
                    .regression(*t, &[ds], &[s])
                    .ok_or_else(|| Error::Input("drift regression unavailable along the fit".into()))?;
                let mut target = dds - reg.offset;
                for (i, v) in reg.theta_indices.iter().zip(&reg.regressors) {
                    match cols.iter().position(|c| c == i) {
                        Some(c) => a[(r, c)] = *v,
                        None => target -= known[*i] * v,
                    }
                }
                b[r] = target;
            }
            let sol = a.svd(true, true).solve(&b, 1e-12).map_err(|e| Error::Numerical { node: 0, message: e.into() })?;
            for (c, i) in cols.iter().enumerate() {
                theta[*i] = sol[c];
            }
        }
    }
    DecisionVector::new(1, x, z0, layout.restrict(&theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_duffing, BenchmarkOptions, MeasurementKind};
    use crate::sim::order15_step;

    #[test]
    fn spline_reproduces_cubic_interior_and_lines() {
        let t: Vec<f64> = (0..11).map(|k| k as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|s| 2.0 * s - 1.0).collect();
        let sp = CubicSpline::natural(&t, &y).unwrap();
        for s in [0.0, 0.45, 1.7, 3.0] {
            let (v, d, dd) = sp.eval(s);
            assert!((v - (2.0 * s - 1.0)).abs() < 1e-12);
            assert!((d - 2.0).abs() < 1e-12);
            assert!(dd.abs() < 1e-12);
        }
        let t: Vec<f64> = (0..41).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|s| s.sin()).collect();
        let sp = CubicSpline::natural(&t, &y).unwrap();
        let (v, d, dd) = sp.eval(2.05);
        assert!((v - 2.05f64.sin()).abs() < 1e-5);
        assert!((d - 2.05f64.cos()).abs() < 1e-4);
        assert!((dd + 2.05f64.sin()).abs() < 1e-2);
    }

    #[test]
    fn smoother_keeps_lines_and_damps_noise() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|s| 0.5 * s + 2.0).collect();
        let s = whittaker_gcv(&t, &y).unwrap();
        for (a, b) in s.values.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut r = crate::rng::stream(1, 0);
        let truth: Vec<f64> = t.iter().map(|s| s.sin()).collect();
        let noisy: Vec<f64> = truth.iter().map(|v| v + 0.1 * crate::rng::standard_normal(&mut r)).collect();
        let s = whittaker_gcv(&t, &noisy).unwrap();
        let err = |v: &[f64]| v.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!(err(&s.values) < 0.5 * err(&noisy));
        assert!(whittaker_gcv(&t[..3], &noisy[..3]).is_err());
    }

    fn duffing_model(t_f: f64) -> crate::model::BenchmarkSpec {
        make_duffing(MeasurementKind::Gaussian, t_f, &BenchmarkOptions::default()).unwrap()
    }

    #[test]
    fn derivative_of_noiseless_ramp() {
        let spec = duffing_model(5.0);
        let times = spec.sample_times();
        let y = times.clone();
        let grid = Partition::uniform(5.0, 100).unwrap();
        let layout = ParamLayout::all_free(4);
        let v = initial_guess(&times, &y, &grid, &spec.model, spec.prior.as_ref(), &layout).unwrap();
        for k in 1..100 {
            assert!((v.x[k] - 1.0).abs() < 1e-3, "node {k}: {}", v.x[k]);
        }
        assert!((v.theta[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_recovers_linear_drift() {
        // a = 0 (known), b = 1, d = 0.2: z'' = -z - 0.2 z' + 0.3 cos t
        let spec = duffing_model(50.0);
        let noiseless = DynamicsModel::noiseless(spec.model.drift().clone(), spec.model.validity().clone()).unwrap();
        let theta = [0.0, 1.0, 0.2, 0.1];
        let h = 0.001;
        let mut y = vec![0.5, 0.0];
        let times = spec.sample_times();
        let mut obs = vec![y[1]];
        for k in 0..50_000 {
            y = order15_step(&noiseless, k as f64 * h, &y, &theta, h, &[0.0], &[0.0]);
            if (k + 1) % 100 == 0 {
                obs.push(y[1]);
            }
        }
        assert_eq!(obs.len(), times.len());
        let layout = ParamLayout::with_fixed(4, &[(0, 0.0)]).unwrap();
        let grid = Partition::uniform(50.0, 500).unwrap();
        let v = initial_guess(&times, &obs, &grid, &spec.model, spec.prior.as_ref(), &layout).unwrap();
        assert_eq!(v.theta.len(), 3);
        assert!((v.theta[0] - 1.0).abs() < 0.05, "b {}", v.theta[0]);
        assert!((v.theta[1] - 0.2).abs() < 0.05 * 0.2, "d {}", v.theta[1]);
    }

    #[test]
    fn too_few_measurements() {
        let spec = duffing_model(5.0);
        let grid = Partition::uniform(5.0, 10).unwrap();
        let r = initial_guess(&[0.0, 1.0, 2.0], &[0.0; 3], &grid, &spec.model, spec.prior.as_ref(), &ParamLayout::all_free(4));
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
