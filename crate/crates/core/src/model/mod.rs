//! The system class: an SDE with a noise-driven state `x`, a drift-only
//! (clean) state `z` and a parameter vector `theta`,
//!
//! ```text
//! dX = f(t, X, Z, Θ) dt + G dW
//! dZ = h(t, X, Z, Θ) dt
//! ```
//!
//! together with prior and measurement models and the benchmark systems.
//!
//! Drifts are supplied through the [`Drift`] trait. Analytic derivatives are
//! optional: [`DynamicsModel`] falls back to central differences for any
//! derivative the drift does not provide, and evaluates every drift through a
//! smooth clamp onto the model's [`ValidityBox`].

mod benchmarks;
mod measurement;
mod prior;

pub use benchmarks::{
    benchmark, benchmark_names, make_duffing, make_holmes_rand, BenchmarkOptions, BenchmarkSpec, DuffingDrift, HolmesRandDrift,
    LinearDrift, MeasurementKind,
};
pub use measurement::{
    gaussian_loglik, outlier_mixture_sample, quantized_log_mass, quantized_loglik, student_t4_loglik, Channel, Dataset,
    Likelihood, LinearGaussianMeasurement, MeasurementModel, NodeStates, NoiseSampler, ScalarMeasurement, Sigma,
};
pub use prior::{IndependentPrior, Marginal, Prior};

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dimensions of the noisy state, clean state and parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub q: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, q: usize, m: usize) -> Self {
        Self { n, q, m }
    }

    /// Number of differentiation variables `n + q + m`.
    #[inline]
    pub fn vars(&self) -> usize {
        self.n + self.q + self.m
    }
}

/// Drift `f` linear in some parameters, for the regression initial guess:
/// `f = offset + sum_i regressors[i] * theta[theta_indices[i]]` (scalar `f`).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRegression {
    pub theta_indices: Vec<usize>,
    pub regressors: Vec<f64>,
    pub offset: f64,
}

/// The drift pair `(f, h)` of the system.
///
/// Jacobians are row-major with columns ordered `(x, z, theta)`. The
/// derivative of the `x`-Jacobian of `f` is laid out as one `n x n` block per
/// variable, in the same variable order. Methods returning `bool` report
/// whether an analytic value was written.
pub trait Drift: Send + Sync {
    fn dims(&self) -> Dims;

    /// Noisy drift `f(t, x, z, theta)`, written into `out` (length `n`).
    fn noisy(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]);

    /// Clean drift `h(t, x, z, theta)`, written into `out` (length `q`).
    fn clean(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]);

    fn noisy_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn clean_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// `div_x f`.
    fn divergence(&self, _t: f64, _x: &[f64], _z: &[f64], _theta: &[f64]) -> Option<f64> {
        None
    }

    fn noisy_x_jacobian_derivative(&self, _t: f64, _x: &[f64], _z: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Linear-in-parameters form of a scalar `f`, if it has one.
    fn regression(&self, _t: f64, _x: &[f64], _z: &[f64]) -> Option<DriftRegression> {
        None
    }
}

/// Axis-aligned box over the stacked state `(x, z)` inside which the drift is
/// evaluated unmodified.
///
/// Outside the box each coordinate is passed through a cosine taper: the
/// slope falls from 1 to 0 as `(1 + cos(pi s / margin)) / 2` over a margin of
/// 10% of the box width, after which the coordinate is held constant. The
/// clamp is twice continuously differentiable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ValidityBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Input("validity box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Input("validity box needs lower < upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half_width, half_width]` in every coordinate.
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64], z: &[f64]) -> bool {
        x.iter().chain(z).zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Clamped value and its slope for coordinate `i`.
    pub fn taper(&self, i: usize, v: f64) -> (f64, f64) {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if v >= lo && v <= hi {
            return (v, 1.0);
        }
        let margin = 0.1 * (hi - lo);
        let (excess, sign, edge) = if v > hi { (v - hi, 1.0, hi) } else { (lo - v, -1.0, lo) };
        if !margin.is_finite() {
            return (v, 1.0);
        }
        if excess >= margin {
            return (edge + sign * 0.5 * margin, 0.0);
        }
        let phase = std::f64::consts::PI * excess / margin;
        let offset = 0.5 * excess + margin / (2.0 * std::f64::consts::PI) * phase.sin();
        (edge + sign * offset, 0.5 * (1.0 + phase.cos()))
    }
}

type EvalFn<'a> = &'a dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]);
type JacobianFn<'a> = &'a dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) -> bool;

/// Central-difference step for a coordinate of magnitude `v`.
#[inline]
pub(crate) fn fd_step(v: f64) -> f64 {
    (1e-6 * v.abs()).max(1e-6)
}

/// An SDE system: drift pair, constant diffusion matrix and validity box.
#[derive(Clone)]
pub struct DynamicsModel {
    drift: Arc<dyn Drift>,
    dims: Dims,
    diffusion: DMatrix<f64>,
    diffusion_inv: Option<DMatrix<f64>>,
    validity: ValidityBox,
    lipschitz_hint: Option<(f64, f64)>,
}

impl std::fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicsModel")
            .field("dims", &self.dims)
            .field("diffusion", &self.diffusion)
            .field("validity", &self.validity)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl DynamicsModel {
    /// Build a model; `diffusion` must be an invertible `n x n` matrix.
    pub fn new(drift: Arc<dyn Drift>, diffusion: DMatrix<f64>, validity: ValidityBox) -> Result<Self> {
        let dims = drift.dims();
        check_shapes(dims, &diffusion, &validity)?;
        let norm = diffusion.norm();
        let det = diffusion.clone().lu().determinant();
        if !(det.abs() > 1e-12 * norm.powi(dims.n as i32)) {
            return Err(Error::Domain(format!("diffusion matrix is singular (det = {det:e})")));
        }
        let inv = diffusion.clone().try_inverse().ok_or_else(|| Error::Domain("diffusion matrix is singular".into()))?;
        Ok(Self { drift, dims, diffusion, diffusion_inv: Some(inv), validity, lipschitz_hint: None })
    }

    /// Model with `G = 0`. It can be simulated but not used in a log-posterior.
    pub fn noiseless(drift: Arc<dyn Drift>, validity: ValidityBox) -> Result<Self> {
        let dims = drift.dims();
        let diffusion = DMatrix::zeros(dims.n, dims.n);
        check_shapes(dims, &diffusion, &validity)?;
        Ok(Self { drift, dims, diffusion, diffusion_inv: None, validity, lipschitz_hint: None })
    }

    /// Lipschitz constants `(L_f, L_h)` of the drifts in `(x, z)`.
    pub fn with_lipschitz_hint(mut self, l_f: f64, l_h: f64) -> Self {
        self.lipschitz_hint = Some((l_f, l_h));
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    pub fn diffusion_inv(&self) -> Result<&DMatrix<f64>> {
        self.diffusion_inv.as_ref().ok_or_else(|| Error::Domain("model has a singular diffusion matrix".into()))
    }

    pub fn validity(&self) -> &ValidityBox {
        &self.validity
    }

    pub fn lipschitz_hint(&self) -> Option<(f64, f64)> {
        self.lipschitz_hint
    }

    pub fn drift(&self) -> &Arc<dyn Drift> {
        &self.drift
    }

    /// Whether `(L_f + L_h) * mesh < 2`; `None` when no hint was supplied.
    pub fn trapezoid_condition(&self, mesh: f64) -> Option<bool> {
        self.lipschitz_hint.map(|(lf, lh)| (lf + lh) * mesh < 2.0)
    }

    fn clamped(&self, x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut cx = Vec::with_capacity(n);
        let mut cz = Vec::with_capacity(z.len());
        let mut slope = Vec::with_capacity(n + z.len());
        for (i, v) in x.iter().enumerate() {
            let (c, s) = self.validity.taper(i, *v);
            cx.push(c);
            slope.push(s);
        }
        for (j, v) in z.iter().enumerate() {
            let (c, s) = self.validity.taper(n + j, *v);
            cz.push(c);
            slope.push(s);
        }
        (cx, cz, slope)
    }

    /// Noisy drift `f` (clamped outside the validity box).
    pub fn drift_noisy(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        if self.validity.contains(x, z) {
            self.drift.noisy(t, x, z, theta, out);
        } else {
            let (cx, cz, _) = self.clamped(x, z);
            self.drift.noisy(t, &cx, &cz, theta, out);
        }
    }

    /// Clean drift `h` (clamped outside the validity box).
    pub fn drift_clean(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        if self.validity.contains(x, z) {
            self.drift.clean(t, x, z, theta, out);
        } else {
            let (cx, cz, _) = self.clamped(x, z);
            self.drift.clean(t, &cx, &cz, theta, out);
        }
    }

    /// Jacobian of `f` with respect to `(x, z, theta)`, `n x (n+q+m)`.
    pub fn noisy_jacobian(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        let rows = self.dims.n;
        self.jacobian(
            rows,
            &|t, x, z, th, o| self.drift.noisy_jacobian(t, x, z, th, o),
            &|t, x, z, th, o| self.drift_noisy(t, x, z, th, o),
            t,
            x,
            z,
            theta,
            out,
        );
    }

    /// Jacobian of `h` with respect to `(x, z, theta)`, `q x (n+q+m)`.
    pub fn clean_jacobian(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        let rows = self.dims.q;
        self.jacobian(
            rows,
            &|t, x, z, th, o| self.drift.clean_jacobian(t, x, z, th, o),
            &|t, x, z, th, o| self.drift_clean(t, x, z, th, o),
            t,
            x,
            z,
            theta,
            out,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn jacobian(
        &self,
        rows: usize,
        analytic: JacobianFn<'_>,
        effective: EvalFn<'_>,
        t: f64,
        x: &[f64],
        z: &[f64],
        theta: &[f64],
        out: &mut [f64],
    ) {
        if rows == 0 {
            return;
        }
        let vars = self.dims.vars();
        if self.validity.contains(x, z) {
            if !analytic(t, x, z, theta, out) {
                fd_jacobian(effective, rows, vars, t, x, z, theta, out);
            }
            return;
        }
        let (cx, cz, slope) = self.clamped(x, z);
        if analytic(t, &cx, &cz, theta, out) {
            for r in 0..rows {
                for (c, s) in slope.iter().enumerate() {
                    out[r * vars + c] *= s;
                }
            }
        } else {
            fd_jacobian(effective, rows, vars, t, x, z, theta, out);
        }
    }

    /// `div_x f`: analytic when supplied, otherwise the trace of the
    /// central-difference `x`-Jacobian.
    pub fn divergence(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64]) -> f64 {
        if self.validity.contains(x, z) {
            if let Some(d) = self.drift.divergence(t, x, z, theta) {
                return d;
            }
        }
        let n = self.dims.n;
        let vars = self.dims.vars();
        let mut jac = vec![0.0; n * vars];
        self.noisy_jacobian(t, x, z, theta, &mut jac);
        (0..n).map(|i| jac[i * vars + i]).sum()
    }

    /// Central-difference divergence of the (clamped) noisy drift.
    pub fn divergence_fd(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64]) -> f64 {
        let n = self.dims.n;
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let mut div = 0.0;
        for i in 0..n {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            self.drift_noisy(t, &xp, z, theta, &mut fp);
            xp[i] = x[i] - h;
            self.drift_noisy(t, &xp, z, theta, &mut fm);
            xp[i] = x[i];
            div += (fp[i] - fm[i]) / (2.0 * h);
        }
        div
    }

    /// Derivative of the `x`-Jacobian of `f` with respect to each variable,
    /// `(n+q+m)` blocks of `n x n`.
    pub fn noisy_x_jacobian_derivative(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        if self.validity.contains(x, z) && self.drift.noisy_x_jacobian_derivative(t, x, z, theta, out) {
            return;
        }
        let Dims { n, q, .. } = self.dims;
        let vars = self.dims.vars();
        let mut scratch = vec![0.0; n * vars];
        if !self.drift.noisy_jacobian(t, x, z, theta, &mut scratch) {
            self.mixed_second_differences(t, x, z, theta, out);
            return;
        }
        let mut jp = vec![0.0; n * vars];
        let mut jm = vec![0.0; n * vars];
        let (mut xs, mut zs, mut ths) = (x.to_vec(), z.to_vec(), theta.to_vec());
        for v in 0..vars {
            let base = if v < n {
                x[v]
            } else if v < n + q {
                z[v - n]
            } else {
                theta[v - n - q]
            };
            let h = (1e-5 * base.abs()).max(1e-5);
            set_var(&mut xs, &mut zs, &mut ths, n, q, v, base + h);
            self.noisy_jacobian(t, &xs, &zs, &ths, &mut jp);
            set_var(&mut xs, &mut zs, &mut ths, n, q, v, base - h);
            self.noisy_jacobian(t, &xs, &zs, &ths, &mut jm);
            set_var(&mut xs, &mut zs, &mut ths, n, q, v, base);
            for i in 0..n {
                for j in 0..n {
                    out[v * n * n + i * n + j] = (jp[i * vars + j] - jm[i * vars + j]) / (2.0 * h);
                }
            }
        }
    }

    /// `d^2 f_i / (dx_j dv)` by the four-point mixed difference of `f`.
    fn mixed_second_differences(&self, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
        let Dims { n, q, .. } = self.dims;
        let vars = self.dims.vars();
        let (mut xs, mut zs, mut ths) = (x.to_vec(), z.to_vec(), theta.to_vec());
        let mut f = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for v in 0..vars {
            let base_v = if v < n {
                x[v]
            } else if v < n + q {
                z[v - n]
            } else {
                theta[v - n - q]
            };
            let hv = 1e-4 * base_v.abs().max(1.0);
            for j in 0..n {
                let hj = 1e-4 * x[j].abs().max(1.0);
                for (c, (sj, sv)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().enumerate() {
                    set_var(&mut xs, &mut zs, &mut ths, n, q, v, base_v + sv * hv);
                    // v == j moves the same coordinate twice
                    let xj = if v == j { base_v + sv * hv } else { x[j] };
                    xs[j] = xj + sj * hj;
                    self.drift_noisy(t, &xs, &zs, &ths, &mut f[c]);
                    xs[j] = x[j];
                    set_var(&mut xs, &mut zs, &mut ths, n, q, v, base_v);
                }
                for i in 0..n {
                    out[v * n * n + i * n + j] = (f[0][i] - f[1][i] - f[2][i] + f[3][i]) / (4.0 * hj * hv);
                }
            }
        }
    }

    /// Linear-in-parameters form of `f`, available inside the validity box.
    pub fn regression(&self, t: f64, x: &[f64], z: &[f64]) -> Option<DriftRegression> {
        let (cx, cz, _) = self.clamped(x, z);
        self.drift.regression(t, &cx, &cz)
    }
}

fn check_shapes(dims: Dims, diffusion: &DMatrix<f64>, validity: &ValidityBox) -> Result<()> {
    if diffusion.nrows() != dims.n || diffusion.ncols() != dims.n {
        return Err(Error::Input(format!(
            "diffusion must be {n}x{n}, got {}x{}",
            diffusion.nrows(),
            diffusion.ncols(),
            n = dims.n
        )));
    }
    if validity.lower.len() != dims.n + dims.q {
        return Err(Error::Input(format!(
            "validity box has {} coordinates, state has {}",
            validity.lower.len(),
            dims.n + dims.q
        )));
    }
    Ok(())
}

fn set_var(x: &mut [f64], z: &mut [f64], th: &mut [f64], n: usize, q: usize, v: usize, value: f64) {
    if v < n {
        x[v] = value;
    } else if v < n + q {
        z[v - n] = value;
    } else {
        th[v - n - q] = value;
    }
}

#[allow(clippy::too_many_arguments)]
fn fd_jacobian(eval: EvalFn<'_>, rows: usize, vars: usize, t: f64, x: &[f64], z: &[f64], theta: &[f64], out: &mut [f64]) {
    let (n, q) = (x.len(), z.len());
    let (mut xs, mut zs, mut ths) = (x.to_vec(), z.to_vec(), theta.to_vec());
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for v in 0..vars {
        let base = if v < n {
            x[v]
        } else if v < n + q {
            z[v - n]
        } else {
            theta[v - n - q]
        };
        let h = fd_step(base);
        set_var(&mut xs, &mut zs, &mut ths, n, q, v, base + h);
        eval(t, &xs, &zs, &ths, &mut fp);
        set_var(&mut xs, &mut zs, &mut ths, n, q, v, base - h);
        eval(t, &xs, &zs, &ths, &mut fm);
        set_var(&mut xs, &mut zs, &mut ths, n, q, v, base);
        for r in 0..rows {
            out[r * vars + v] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Drift with no analytic derivatives, to exercise the fallbacks.
    struct Plain;
    impl Drift for Plain {
        fn dims(&self) -> Dims {
            Dims::new(2, 1, 1)
        }
        fn noisy(&self, t: f64, x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) {
            out[0] = -th[0] * x[0] * x[0] * x[0] + z[0] * x[1] + t.sin();
            out[1] = x[0] * x[1] - z[0] * z[0];
        }
        fn clean(&self, _t: f64, x: &[f64], z: &[f64], _th: &[f64], out: &mut [f64]) {
            out[0] = x[0] - 0.5 * z[0];
        }
    }

    fn plain() -> DynamicsModel {
        DynamicsModel::new(Arc::new(Plain), DMatrix::identity(2, 2), ValidityBox::symmetric(3, 4.0)).unwrap()
    }

    #[test]
    fn rejects_singular_diffusion() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(DynamicsModel::new(Arc::new(Plain), g, ValidityBox::symmetric(3, 1.0)), Err(Error::Domain(_))));
        let m = DynamicsModel::noiseless(Arc::new(Plain), ValidityBox::symmetric(3, 1.0)).unwrap();
        assert!(m.diffusion_inv().is_err());
    }

    #[test]
    fn fallback_divergence_matches_trace() {
        let m = plain();
        let (x, z, th) = ([0.3, -0.7], [0.2], [1.5]);
        let expect = -3.0 * 1.5 * 0.09 + 0.3;
        assert!((m.divergence(0.1, &x, &z, &th) - expect).abs() < 1e-8);
        assert!((m.divergence_fd(0.1, &x, &z, &th) - expect).abs() < 1e-8);
    }

    #[test]
    fn fallback_second_derivative() {
        let m = plain();
        let (x, z, th) = ([0.3, -0.7], [0.2], [1.5]);
        let mut out = vec![0.0; 4 * 4];
        m.noisy_x_jacobian_derivative(0.0, &x, &z, &th, &mut out);
        // d(df0/dx0)/dx0 = -6 th x0
        assert!((out[0] - (-6.0 * 1.5 * 0.3)).abs() < 1e-6);
        // d(df0/dx1)/dz = 1
        assert!((out[2 * 4 + 1] - 1.0).abs() < 1e-6);
        // d(df1/dx0)/dx1 = 1
        assert!((out[4 + 2] - 1.0).abs() < 1e-6);
        // d(df0/dx0)/dtheta = -3 x0^2
        assert!((out[3 * 4] - (-3.0 * 0.09)).abs() < 1e-6);
    }

    #[test]
    fn taper_is_identity_inside_and_saturates_outside() {
        let b = ValidityBox::symmetric(1, 2.0);
        assert_eq!(b.taper(0, 1.5), (1.5, 1.0));
        let (v, s) = b.taper(0, 2.0 + 0.4);
        assert!((v - 2.2).abs() < 1e-12);
        assert_eq!(s, 0.0);
        let (v, s) = b.taper(0, -100.0);
        assert!((v + 2.2).abs() < 1e-12);
        assert_eq!(s, 0.0);
        // Slope is the derivative of the value.
        for u in [2.01, 2.1, 2.3, -2.05, -2.35] {
            let h = 1e-7;
            let fd = (b.taper(0, u + h).0 - b.taper(0, u - h).0) / (2.0 * h);
            assert!((fd - b.taper(0, u).1).abs() < 1e-6, "u={u}");
        }
    }

    #[test]
    fn clamped_jacobian_matches_differences_outside_box() {
        let m = plain();
        let (x, z, th) = ([4.1, 0.5], [-4.2], [0.8]);
        let mut jac = vec![0.0; 2 * 4];
        m.noisy_jacobian(0.3, &x, &z, &th, &mut jac);
        let mut fd = vec![0.0; 2 * 4];
        fd_jacobian(&|t, x, z, th, o| m.drift_noisy(t, x, z, th, o), 2, 4, 0.3, &x, &z, &th, &mut fd);
        for (a, b) in jac.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
