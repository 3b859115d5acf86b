use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::measurement::{Channel, Likelihood, MeasurementModel, NoiseSampler, ScalarMeasurement, Sigma};
use super::prior::{IndependentPrior, Marginal, Prior};
use super::{Dims, Drift, DriftRegression, DynamicsModel, ValidityBox};
use crate::error::{Error, Result};

/// Duffing oscillator
///
/// ```text
/// f = -a z^3 - b z - d x + gamma cos t,    h = x,    theta = [a, b, d, sigma_y]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct DuffingDrift {
    pub gamma: f64,
}

impl Drift for DuffingDrift {
    fn dims(&self) -> Dims {
        Dims::new(1, 1, 4)
    }

    fn noisy(&self, t: f64, x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) {
        let z = z[0];
        out[0] = -th[0] * z * z * z - th[1] * z - th[2] * x[0] + self.gamma * t.cos();
    }

    fn clean(&self, _t: f64, x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn noisy_jacobian(&self, _t: f64, x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) -> bool {
        let z = z[0];
        out.copy_from_slice(&[-th[2], -3.0 * th[0] * z * z - th[1], -z * z * z, -z, -x[0], 0.0]);
        true
    }

    fn clean_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        true
    }

    fn divergence(&self, _t: f64, _x: &[f64], _z: &[f64], th: &[f64]) -> Option<f64> {
        Some(-th[2])
    }

    fn noisy_x_jacobian_derivative(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&[0.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        true
    }

    fn regression(&self, t: f64, x: &[f64], z: &[f64]) -> Option<DriftRegression> {
        let z = z[0];
        Some(DriftRegression {
            theta_indices: vec![0, 1, 2],
            regressors: vec![-z * z * z, -z, -x[0]],
            offset: self.gamma * t.cos(),
        })
    }
}

/// Holmes–Rand oscillator
///
/// ```text
/// f = -(a + gamma z^2) x - b z - d z^3 + phi cos t,    h = x,
/// theta = [a, b, gamma, d, sigma_y]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct HolmesRandDrift {
    pub phi: f64,
}

impl Drift for HolmesRandDrift {
    fn dims(&self) -> Dims {
        Dims::new(1, 1, 5)
    }

    fn noisy(&self, t: f64, x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) {
        let (x, z) = (x[0], z[0]);
        out[0] = -(th[0] + th[2] * z * z) * x - th[1] * z - th[3] * z * z * z + self.phi * t.cos();
    }

    fn clean(&self, _t: f64, x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn noisy_jacobian(&self, _t: f64, x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) -> bool {
        let (x, z) = (x[0], z[0]);
        out.copy_from_slice(&[
            -(th[0] + th[2] * z * z),
            -2.0 * th[2] * z * x - th[1] - 3.0 * th[3] * z * z,
            -x,
            -z,
            -z * z * x,
            -z * z * z,
            0.0,
        ]);
        true
    }

    fn clean_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        true
    }

    fn divergence(&self, _t: f64, _x: &[f64], z: &[f64], th: &[f64]) -> Option<f64> {
        Some(-(th[0] + th[2] * z[0] * z[0]))
    }

    fn noisy_x_jacobian_derivative(&self, _t: f64, _x: &[f64], z: &[f64], th: &[f64], out: &mut [f64]) -> bool {
        let z = z[0];
        out.copy_from_slice(&[0.0, -2.0 * th[2] * z, -1.0, 0.0, -z * z, 0.0, 0.0]);
        true
    }

    fn regression(&self, t: f64, x: &[f64], z: &[f64]) -> Option<DriftRegression> {
        let (x, z) = (x[0], z[0]);
        Some(DriftRegression {
            theta_indices: vec![0, 1, 2, 3],
            regressors: vec![-x, -z, -z * z * x, -z * z * z],
            offset: self.phi * t.cos(),
        })
    }
}

/// Time-invariant affine drift with no parameters:
/// `f = Fs + f0`, `h = Hs + h0`, where `s = [x; z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDrift {
    n: usize,
    q: usize,
    f: DMatrix<f64>,
    f0: DVector<f64>,
    h: DMatrix<f64>,
    h0: DVector<f64>,
}

impl LinearDrift {
    pub fn new(f: DMatrix<f64>, f0: DVector<f64>, h: DMatrix<f64>, h0: DVector<f64>) -> Result<Self> {
        let (n, q) = (f.nrows(), h.nrows());
        if f.ncols() != n + q || h.ncols() != n + q || f0.len() != n || h0.len() != q {
            return Err(Error::Input("linear drift blocks have inconsistent shapes".into()));
        }
        Ok(Self { n, q, f, f0, h, h0 })
    }

    fn apply(m: &DMatrix<f64>, c: &DVector<f64>, x: &[f64], z: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = m.row(r);
            *o = c[r] + x.iter().chain(z).enumerate().map(|(j, v)| row[j] * v).sum::<f64>();
        }
    }

    fn jac(m: &DMatrix<f64>, out: &mut [f64]) {
        let cols = m.ncols();
        for r in 0..m.nrows() {
            for c in 0..cols {
                out[r * cols + c] = m[(r, c)];
            }
        }
    }
}

impl Drift for LinearDrift {
    fn dims(&self) -> Dims {
        Dims::new(self.n, self.q, 0)
    }

    fn noisy(&self, _t: f64, x: &[f64], z: &[f64], _th: &[f64], out: &mut [f64]) {
        Self::apply(&self.f, &self.f0, x, z, out);
    }

    fn clean(&self, _t: f64, x: &[f64], z: &[f64], _th: &[f64], out: &mut [f64]) {
        Self::apply(&self.h, &self.h0, x, z, out);
    }

    fn noisy_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        Self::jac(&self.f, out);
        true
    }

    fn clean_jacobian(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        Self::jac(&self.h, out);
        true
    }

    fn divergence(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64]) -> Option<f64> {
        Some((0..self.n).map(|i| self.f[(i, i)]).sum())
    }

    fn noisy_x_jacobian_derivative(&self, _t: f64, _x: &[f64], _z: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
}

/// Measurement variant of the Duffing benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// Gaussian noise, Gaussian likelihood.
    Gaussian,
    /// Outlier-mixture noise, Student-t likelihood.
    StudentT,
    /// Outlier-mixture noise, Gaussian likelihood.
    OutlierSim,
}

/// Tunable settings of the benchmark builders. `None` keeps the nominal value.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub t_s: f64,
    /// Outlier probability of the mixture sampler.
    pub p_o: f64,
    pub sigma_o: f64,
    pub sigma_r: f64,
    /// Bin length of the quantizer.
    pub l_b: f64,
    /// True measurement scale for the Holmes–Rand benchmark.
    pub sigma_y: f64,
    /// Forcing amplitude (`gamma` for Duffing, `phi` for Holmes–Rand).
    pub forcing: Option<f64>,
    pub sigma_d: Option<f64>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self { t_s: 0.1, p_o: 0.4, sigma_o: 1.0, sigma_r: 0.2, l_b: 0.05, sigma_y: 0.05, forcing: None, sigma_d: None }
    }
}

/// A complete benchmark: dynamics, prior, measurement model, nominal
/// parameters and the sampling layout.
#[derive(Clone)]
pub struct BenchmarkSpec {
    pub name: String,
    pub model: DynamicsModel,
    pub prior: Arc<dyn Prior>,
    pub measurement: Arc<dyn MeasurementModel>,
    pub theta_names: Vec<&'static str>,
    pub theta_nominal: Vec<f64>,
    pub t_f: f64,
    pub t_s: f64,
}

impl std::fmt::Debug for BenchmarkSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkSpec")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("theta_names", &self.theta_names)
            .field("theta_nominal", &self.theta_nominal)
            .field("t_f", &self.t_f)
            .field("t_s", &self.t_s)
            .finish()
    }
}

impl BenchmarkSpec {
    /// Number of sampling intervals `N = t_f / t_s`.
    pub fn intervals(&self) -> usize {
        (self.t_f / self.t_s).round() as usize
    }

    /// Sample times `k t_s`, `k = 0..=N`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.intervals()).map(|k| k as f64 * self.t_s).collect()
    }

    pub fn theta_index(&self, name: &str) -> Option<usize> {
        self.theta_names.iter().position(|n| *n == name)
    }
}

fn check_horizon(t_f: f64, t_s: f64) -> Result<()> {
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t_f}")));
    }
    if !(t_s > 0.0 && t_s <= t_f) {
        return Err(Error::Domain(format!("sampling period must lie in (0, t_f], got {t_s}")));
    }
    let n = (t_f / t_s).round();
    if (n * t_s - t_f).abs() > 1e-9 * t_f {
        return Err(Error::Input(format!("horizon {t_f} is not a multiple of the sampling period {t_s}")));
    }
    Ok(())
}

const BOX_HALF_WIDTH: f64 = 10.0;

/// Duffing oscillator benchmark with nominal `(a, b, d, sigma_y) = (1, -1, 0.2, 0.1)`.
pub fn make_duffing(kind: MeasurementKind, t_f: f64, opts: &BenchmarkOptions) -> Result<BenchmarkSpec> {
    check_horizon(t_f, opts.t_s)?;
    let gamma = opts.forcing.unwrap_or(0.3);
    let sigma_d = opts.sigma_d.unwrap_or(0.1);
    let model = DynamicsModel::new(
        Arc::new(DuffingDrift { gamma }),
        DMatrix::from_element(1, 1, sigma_d),
        ValidityBox::symmetric(2, BOX_HALF_WIDTH),
    )?;
    let wide = Marginal::Normal { mean: 0.0, sd: 10.0 };
    let prior = IndependentPrior::new(
        vec![Marginal::Normal { mean: 0.0, sd: 0.4 }],
        vec![Marginal::Normal { mean: 0.0, sd: 0.4 }],
        vec![wide, wide, wide, Marginal::Gamma { shape: 1.1, scale: 10.0 }],
    );
    let mixture = NoiseSampler::OutlierMixture { p_o: opts.p_o, sigma_o: opts.sigma_o, sigma_r: opts.sigma_r };
    let (name, likelihood, sampler) = match kind {
        MeasurementKind::Gaussian => ("duffing-gaussian", Likelihood::Gaussian, NoiseSampler::Gaussian),
        MeasurementKind::StudentT => ("duffing-student-t", Likelihood::StudentT4, mixture),
        MeasurementKind::OutlierSim => ("duffing-outlier-gaussian", Likelihood::Gaussian, mixture),
    };
    if matches!(sampler, NoiseSampler::OutlierMixture { .. })
        && !((0.0..=1.0).contains(&opts.p_o) && opts.sigma_o > 0.0 && opts.sigma_r > 0.0)
    {
        return Err(Error::Domain("outlier mixture needs p_o in [0, 1] and positive scales".into()));
    }
    let measurement = ScalarMeasurement { channel: Channel::Clean(0), sigma: Sigma::Param(3), likelihood, sampler };
    Ok(BenchmarkSpec {
        name: name.into(),
        model,
        prior: Arc::new(prior),
        measurement: Arc::new(measurement),
        theta_names: vec!["a", "b", "d", "sigma_y"],
        theta_nominal: vec![1.0, -1.0, 0.2, 0.1],
        t_f,
        t_s: opts.t_s,
    })
}

/// Holmes–Rand oscillator with quantized measurements, nominal
/// `(a, b, gamma, d) = (0.2, -1, 0.2, 1)` and measurement scale `sigma_y`.
pub fn make_holmes_rand(t_f: f64, sigma_y: f64, opts: &BenchmarkOptions) -> Result<BenchmarkSpec> {
    check_horizon(t_f, opts.t_s)?;
    if !(sigma_y > 0.0) {
        return Err(Error::Domain(format!("measurement scale must be positive, got {sigma_y}")));
    }
    let l_b = opts.l_b;
    if !(l_b > 0.0) {
        return Err(Error::Domain(format!("bin length must be positive, got {l_b}")));
    }
    let phi = opts.forcing.unwrap_or(0.4);
    let sigma_d = opts.sigma_d.unwrap_or(0.1);
    let model = DynamicsModel::new(
        Arc::new(HolmesRandDrift { phi }),
        DMatrix::from_element(1, 1, sigma_d),
        ValidityBox::symmetric(2, BOX_HALF_WIDTH),
    )?;
    let wide = Marginal::Normal { mean: 0.0, sd: 10.0 };
    let prior = IndependentPrior::new(
        vec![Marginal::Normal { mean: 0.0, sd: 0.1 }],
        vec![Marginal::Normal { mean: 0.0, sd: 0.1 }],
        vec![wide, wide, wide, wide, Marginal::Gamma { shape: 4.0, scale: l_b / 3.0 }],
    );
    let measurement = ScalarMeasurement {
        channel: Channel::Clean(0),
        sigma: Sigma::Param(4),
        likelihood: Likelihood::Quantized { bin: l_b },
        sampler: NoiseSampler::Quantized { bin: l_b },
    };
    Ok(BenchmarkSpec {
        name: "holmes-rand".into(),
        model,
        prior: Arc::new(prior),
        measurement: Arc::new(measurement),
        theta_names: vec!["a", "b", "gamma", "d", "sigma_y"],
        theta_nominal: vec![0.2, -1.0, 0.2, 1.0, sigma_y],
        t_f,
        t_s: opts.t_s,
    })
}

/// Registered benchmark names.
pub fn benchmark_names() -> &'static [&'static str] {
    &["duffing-gaussian", "duffing-student-t", "duffing-outlier-gaussian", "holmes-rand"]
}

/// Look up a benchmark by name.
pub fn benchmark(name: &str, t_f: f64, opts: &BenchmarkOptions) -> Result<BenchmarkSpec> {
    match name {
        "duffing-gaussian" => make_duffing(MeasurementKind::Gaussian, t_f, opts),
        "duffing-student-t" => make_duffing(MeasurementKind::StudentT, t_f, opts),
        "duffing-outlier-gaussian" => make_duffing(MeasurementKind::OutlierSim, t_f, opts),
        "holmes-rand" => make_holmes_rand(t_f, opts.sigma_y, opts),
        _ => Err(Error::Input(format!("unknown benchmark {name:?}; expected one of {}", benchmark_names().join(", ")))),
    }
}
