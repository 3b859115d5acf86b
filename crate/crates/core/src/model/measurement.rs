use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{self, standard_normal, SimRng};

/// Measurement record: sample times and one `dim`-vector per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != times.len() * dim {
            return Err(Error::Input(format!(
                "dataset has {} times of dimension {dim} but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Input(format!("sample times not strictly increasing at {} -> {}", w[0], w[1])));
        }
        if values.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(Self { times, dim, values })
    }

    /// A dataset with no measurements.
    pub fn empty(dim: usize) -> Self {
        Self { times: Vec::new(), dim, values: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// States at the measurement times: `x` is `K x n`, `z` is `K x q`.
#[derive(Debug, Clone, Copy)]
pub struct NodeStates<'a> {
    pub n: usize,
    pub q: usize,
    pub x: &'a [f64],
    pub z: &'a [f64],
}

/// Conditional law `psi(y | x, z, theta)` of the measurements.
pub trait MeasurementModel: Send + Sync {
    fn output_dim(&self) -> usize;

    /// Log-likelihood, additive constants dropped.
    fn log_likelihood(&self, y: &Dataset, states: &NodeStates<'_>, theta: &[f64]) -> Result<f64>;

    /// Add the gradient into `gx` (`K x n`), `gz` (`K x q`) and `gtheta`.
    fn add_gradient(
        &self,
        y: &Dataset,
        states: &NodeStates<'_>,
        theta: &[f64],
        gx: &mut [f64],
        gz: &mut [f64],
        gtheta: &mut [f64],
    ) -> Result<()>;

    /// Draw measurements at `times` given the states there.
    fn sample(&self, times: &[f64], states: &NodeStates<'_>, theta: &[f64], rng: &mut SimRng) -> Result<Dataset>;

    /// Check that a dataset is admissible for this model.
    fn validate(&self, _y: &Dataset) -> Result<()> {
        Ok(())
    }

    /// `(C, R)` when `y = C [x; z] + N(0, R)` at the given parameters.
    fn linear_gaussian(&self, _theta: &[f64], _n: usize, _q: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

/// Which state component a scalar sensor observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Noisy(usize),
    Clean(usize),
}

/// Source of the noise scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// `theta[i]`.
    Param(usize),
    Fixed(f64),
}

impl Sigma {
    fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Sigma::Param(i) => theta[i],
            Sigma::Fixed(v) => v,
        }
    }
}

/// Likelihood used for estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    Gaussian,
    /// Student's t with 4 degrees of freedom and scale sigma.
    StudentT4,
    /// Gaussian noise followed by rounding to the nearest multiple of `bin`.
    Quantized {
        bin: f64,
    },
}

/// Noise law used for simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSampler {
    Gaussian,
    /// `N(0, sigma_o^2)` with probability `p_o`, else `N(0, sigma_r^2)`.
    OutlierMixture {
        p_o: f64,
        sigma_o: f64,
        sigma_r: f64,
    },
    Quantized {
        bin: f64,
    },
}

/// One scalar sensor on one state component at every sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMeasurement {
    pub channel: Channel,
    pub sigma: Sigma,
    pub likelihood: Likelihood,
    pub sampler: NoiseSampler,
}

impl ScalarMeasurement {
    fn observed(&self, states: &NodeStates<'_>) -> Vec<f64> {
        let k = states.x.len().checked_div(states.n).unwrap_or(states.z.len() / states.q.max(1));
        (0..k)
            .map(|i| match self.channel {
                Channel::Noisy(j) => states.x[i * states.n + j],
                Channel::Clean(j) => states.z[i * states.q + j],
            })
            .collect()
    }

    fn check(&self, y: &Dataset, states: &NodeStates<'_>) -> Result<Vec<f64>> {
        let obs = self.observed(states);
        if y.dim() != 1 || y.len() != obs.len() {
            return Err(Error::Input(format!(
                "scalar sensor expects {} one-dimensional measurements, got {} of dimension {}",
                obs.len(),
                y.len(),
                y.dim()
            )));
        }
        Ok(obs)
    }
}

impl MeasurementModel for ScalarMeasurement {
    fn output_dim(&self) -> usize {
        1
    }

    fn log_likelihood(&self, y: &Dataset, states: &NodeStates<'_>, theta: &[f64]) -> Result<f64> {
        let obs = self.check(y, states)?;
        let sigma = self.sigma.value(theta);
        match self.likelihood {
            Likelihood::Gaussian => gaussian_loglik(y.values(), &obs, sigma),
            Likelihood::StudentT4 => student_t4_loglik(y.values(), &obs, sigma),
            Likelihood::Quantized { bin } => quantized_loglik(y.values(), &obs, sigma, bin),
        }
    }

    fn add_gradient(
        &self,
        y: &Dataset,
        states: &NodeStates<'_>,
        theta: &[f64],
        gx: &mut [f64],
        gz: &mut [f64],
        gtheta: &mut [f64],
    ) -> Result<()> {
        let obs = self.check(y, states)?;
        let sigma = self.sigma.value(theta);
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("measurement scale must be positive, got {sigma}")));
        }
        let mut dsigma = 0.0;
        for (k, (yk, zk)) in y.values().iter().zip(&obs).enumerate() {
            let (dz, ds) = match self.likelihood {
                Likelihood::Gaussian => {
                    let r = yk - zk;
                    (r / (sigma * sigma), r * r / (sigma * sigma * sigma) - 1.0 / sigma)
                }
                Likelihood::StudentT4 => {
                    let r = yk - zk;
                    let u = r * r / (4.0 * sigma * sigma);
                    (5.0 * r / (4.0 * sigma * sigma * (1.0 + u)), 5.0 * u / (sigma * (1.0 + u)) - 1.0 / sigma)
                }
                Likelihood::Quantized { bin } => {
                    let (_, dd, ds) = quantized_log_mass_derivs(*yk, *zk, sigma, bin);
                    (dd, ds)
                }
            };
            match self.channel {
                Channel::Noisy(j) => gx[k * states.n + j] += dz,
                Channel::Clean(j) => gz[k * states.q + j] += dz,
            }
            dsigma += ds;
        }
        if let Sigma::Param(i) = self.sigma {
            gtheta[i] += dsigma;
        }
        Ok(())
    }

    fn sample(&self, times: &[f64], states: &NodeStates<'_>, theta: &[f64], rng: &mut SimRng) -> Result<Dataset> {
        let obs = self.observed(states);
        let sigma = self.sigma.value(theta);
        let mut values = Vec::with_capacity(obs.len());
        for z in obs {
            let y = match self.sampler {
                NoiseSampler::Gaussian => z + sigma * standard_normal(rng),
                NoiseSampler::OutlierMixture { p_o, sigma_o, sigma_r } => mixture_draw(z, p_o, sigma_o, sigma_r, rng),
                NoiseSampler::Quantized { bin } => bin * ((z + sigma * standard_normal(rng)) / bin).round(),
            };
            values.push(y);
        }
        Dataset::new(times.to_vec(), 1, values)
    }

    fn validate(&self, y: &Dataset) -> Result<()> {
        if let Likelihood::Quantized { bin } = self.likelihood {
            check_multiples(y.values(), bin)?;
        }
        Ok(())
    }

    fn linear_gaussian(&self, theta: &[f64], n: usize, q: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        if self.likelihood != Likelihood::Gaussian {
            return None;
        }
        let mut c = DMatrix::zeros(1, n + q);
        match self.channel {
            Channel::Noisy(j) => c[(0, j)] = 1.0,
            Channel::Clean(j) => c[(0, n + j)] = 1.0,
        }
        let s = self.sigma.value(theta);
        Some((c, DMatrix::from_element(1, 1, s * s)))
    }
}

fn mixture_draw(z: f64, p_o: f64, sigma_o: f64, sigma_r: f64, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.random();
    let e = standard_normal(rng);
    z + if u < p_o { sigma_o } else { sigma_r } * e
}

/// Linear sensor `y = C [x; z] + N(0, R)` with fixed `C` and `R`.
#[derive(Debug, Clone)]
pub struct LinearGaussianMeasurement {
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_chol: DMatrix<f64>,
}

impl LinearGaussianMeasurement {
    pub fn new(c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != c.nrows() || r.ncols() != c.nrows() {
            return Err(Error::Input("R must be square with as many rows as C".into()));
        }
        let chol = r.clone().cholesky().ok_or_else(|| Error::Domain("measurement covariance is not positive definite".into()))?;
        Ok(Self { r_inv: chol.inverse(), r_chol: chol.l(), c, r })
    }

    fn residuals(&self, y: &Dataset, states: &NodeStates<'_>) -> Result<Vec<DVector<f64>>> {
        let p = self.c.nrows();
        if y.dim() != p {
            return Err(Error::Input(format!("expected {p}-dimensional measurements, got {}", y.dim())));
        }
        Ok((0..y.len())
            .map(|k| {
                let s = stacked(states, k);
                DVector::from_column_slice(y.value(k)) - &self.c * s
            })
            .collect())
    }
}

fn stacked(states: &NodeStates<'_>, k: usize) -> DVector<f64> {
    let mut s = DVector::zeros(states.n + states.q);
    for i in 0..states.n {
        s[i] = states.x[k * states.n + i];
    }
    for j in 0..states.q {
        s[states.n + j] = states.z[k * states.q + j];
    }
    s
}

impl MeasurementModel for LinearGaussianMeasurement {
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn log_likelihood(&self, y: &Dataset, states: &NodeStates<'_>, _theta: &[f64]) -> Result<f64> {
        Ok(self.residuals(y, states)?.iter().map(|e| -0.5 * e.dot(&(&self.r_inv * e))).sum())
    }

    fn add_gradient(
        &self,
        y: &Dataset,
        states: &NodeStates<'_>,
        _theta: &[f64],
        gx: &mut [f64],
        gz: &mut [f64],
        _gtheta: &mut [f64],
    ) -> Result<()> {
        for (k, e) in self.residuals(y, states)?.iter().enumerate() {
            let g = self.c.transpose() * (&self.r_inv * e);
            for i in 0..states.n {
                gx[k * states.n + i] += g[i];
            }
            for j in 0..states.q {
                gz[k * states.q + j] += g[states.n + j];
            }
        }
        Ok(())
    }

    fn sample(&self, times: &[f64], states: &NodeStates<'_>, _theta: &[f64], rng: &mut SimRng) -> Result<Dataset> {
        let p = self.c.nrows();
        let mut values = Vec::with_capacity(times.len() * p);
        for k in 0..times.len() {
            let e = DVector::from_fn(p, |_, _| standard_normal(rng));
            let y = &self.c * stacked(states, k) + &self.r_chol * e;
            values.extend(y.iter());
        }
        Dataset::new(times.to_vec(), p, values)
    }

    fn linear_gaussian(&self, _theta: &[f64], _n: usize, _q: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.c.clone(), self.r.clone()))
    }
}

fn check_scale(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("measurement scale must be positive, got {sigma}")))
    }
}

fn check_lengths(y: &[f64], z: &[f64]) -> Result<()> {
    if y.len() != z.len() {
        return Err(Error::Input(format!("{} measurements but {} predicted values", y.len(), z.len())));
    }
    Ok(())
}

/// Gaussian log-likelihood `-1/2 sum (y_k - z_k)^2 / s^2 - K ln s`.
pub fn gaussian_loglik(y: &[f64], z: &[f64], sigma: f64) -> Result<f64> {
    check_scale(sigma)?;
    check_lengths(y, z)?;
    let ss: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * ss / (sigma * sigma) - y.len() as f64 * sigma.ln())
}

/// Student-t (4 degrees of freedom) log-likelihood, one `-ln s` per
/// measurement: `sum -5/2 ln(1 + (y_k - z_k)^2 / (4 s^2)) - ln s`.
pub fn student_t4_loglik(y: &[f64], z: &[f64], sigma: f64) -> Result<f64> {
    check_scale(sigma)?;
    check_lengths(y, z)?;
    let s2 = 4.0 * sigma * sigma;
    Ok(y.iter().zip(z).map(|(a, b)| -2.5 * ((a - b) * (a - b) / s2).ln_1p() - sigma.ln()).sum())
}

fn check_multiples(y: &[f64], bin: f64) -> Result<()> {
    if !(bin > 0.0 && bin.is_finite()) {
        return Err(Error::Domain(format!("bin length must be positive, got {bin}")));
    }
    if let Some(v) = y.iter().find(|v| ((*v / bin) - (*v / bin).round()).abs() > 1e-9) {
        return Err(Error::Input(format!("measurement {v} is not a multiple of the bin length {bin}")));
    }
    Ok(())
}

/// Quantized log-likelihood
/// `sum ln(Phi((z - y + l/2) / s) - Phi((z - y - l/2) / s))`.
pub fn quantized_loglik(y: &[f64], z: &[f64], sigma: f64, bin: f64) -> Result<f64> {
    check_scale(sigma)?;
    check_lengths(y, z)?;
    check_multiples(y, bin)?;
    Ok(y.iter().zip(z).map(|(a, b)| quantized_log_mass(*a, *b, sigma, bin)).sum())
}

/// Log-probability that a value with mean `z` and noise `s` rounds to bin `y`.
pub fn quantized_log_mass(y: f64, z: f64, sigma: f64, bin: f64) -> f64 {
    let d = z - y;
    log_ndtr_diff((d - 0.5 * bin) / sigma, (d + 0.5 * bin) / sigma)
}

/// Value and derivatives of [`quantized_log_mass`] in `z` and `s`.
fn quantized_log_mass_derivs(y: f64, z: f64, sigma: f64, bin: f64) -> (f64, f64, f64) {
    let d = z - y;
    let lo = (d - 0.5 * bin) / sigma;
    let hi = (d + 0.5 * bin) / sigma;
    let lm = log_ndtr_diff(lo, hi);
    let phi_hi = (log_phi(hi) - lm).exp();
    let phi_lo = (log_phi(lo) - lm).exp();
    (lm, (phi_hi - phi_lo) / sigma, (lo * phi_lo - hi * phi_hi) / sigma)
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_phi(u: f64) -> f64 {
    -0.5 * u * u - LN_SQRT_2PI
}

/// `ln Q(u)` with `Q` the standard normal upper tail, accurate far into the
/// tail (asymptotic series once `erfc` would underflow).
pub(crate) fn log_upper_tail(u: f64) -> f64 {
    if u < 37.0 {
        (0.5 * erfc(u / std::f64::consts::SQRT_2)).ln()
    } else {
        let w = 1.0 / (u * u);
        -0.5 * u * u - u.ln() - LN_SQRT_2PI + (1.0 - w * (1.0 - w * (3.0 - 15.0 * w))).ln()
    }
}

/// `ln(Phi(b) - Phi(a))` for `a < b`, computed from upper tails so that
/// neither tail loses precision.
fn log_ndtr_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        let (qa, qb) = (log_upper_tail(a), log_upper_tail(b));
        qa + (-(qb - qa).exp()).ln_1p()
    } else if b <= 0.0 {
        let (qa, qb) = (log_upper_tail(-b), log_upper_tail(-a));
        qa + (-(qb - qa).exp()).ln_1p()
    } else {
        let tails = 0.5 * erfc(b / std::f64::consts::SQRT_2) + 0.5 * erfc(-a / std::f64::consts::SQRT_2);
        (-tails).ln_1p()
    }
}

/// Draw `y_k = z_k + e_k` with `e_k ~ N(0, s_o^2)` with probability `p_o`,
/// else `N(0, s_r^2)`. Deterministic in `seed`.
pub fn outlier_mixture_sample(z: &[f64], sigma_r: f64, sigma_o: f64, p_o: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_o) {
        return Err(Error::Domain(format!("outlier probability must lie in [0, 1], got {p_o}")));
    }
    check_scale(sigma_r)?;
    check_scale(sigma_o)?;
    let mut rng = rng::stream(seed, rng::STREAM_MEASUREMENT);
    Ok(z.iter().map(|zk| mixture_draw(*zk, p_o, sigma_o, sigma_r, &mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_cdf(u: f64) -> f64 {
        0.5 * erfc(-u / std::f64::consts::SQRT_2)
    }

    #[test]
    fn gaussian_examples() {
        let z = [0.0, 0.5, -1.0, 2.0, 0.1];
        assert_eq!(gaussian_loglik(&z, &z, 1.0).unwrap(), 0.0);
        let v = gaussian_loglik(&[0.1], &[0.0], 0.1).unwrap();
        assert!((v - (-0.5 - 0.1f64.ln())).abs() < 1e-14);
        assert!(matches!(gaussian_loglik(&[0.0], &[0.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_sigma_derivative_matches_differences() {
        let y = [0.3, -0.1, 0.25, 0.9];
        let z = [0.1, 0.05, 0.2, 0.7];
        let m = ScalarMeasurement {
            channel: Channel::Clean(0),
            sigma: Sigma::Param(0),
            likelihood: Likelihood::Gaussian,
            sampler: NoiseSampler::Gaussian,
        };
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, y.to_vec()).unwrap();
        let states = NodeStates { n: 0, q: 1, x: &[], z: &z };
        let s = 0.17;
        let mut gt = [0.0];
        m.add_gradient(&data, &states, &[s], &mut [], &mut [0.0; 4], &mut gt).unwrap();
        let h = 1e-6 * s;
        let fd = (gaussian_loglik(&y, &z, s + h).unwrap() - gaussian_loglik(&y, &z, s - h).unwrap()) / (2.0 * h);
        assert!(((gt[0] - fd) / fd).abs() < 1e-6);
    }

    #[test]
    fn gaussian_maximized_at_mean_square_residual() {
        let y = [0.3, -0.1, 0.25, 0.9, -0.4];
        let z = [0.1, 0.05, 0.2, 0.7, 0.0];
        let msr: f64 = y.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 5.0;
        let s = msr.sqrt();
        let slope = |s: f64| {
            let h = 1e-7;
            gaussian_loglik(&y, &z, s + h).unwrap() - gaussian_loglik(&y, &z, s - h).unwrap()
        };
        assert!(slope(s * 0.99) > 0.0);
        assert!(slope(s * 1.01) < 0.0);
    }

    #[test]
    fn student_examples() {
        let z = [0.0, 0.5, -1.0];
        assert_eq!(student_t4_loglik(&z, &z, 1.0).unwrap(), 0.0);
        let s = 0.3;
        let v = student_t4_loglik(&[2.0 * s], &[0.0], s).unwrap();
        assert!((v - (-2.5 * 2f64.ln() - s.ln())).abs() < 1e-14);
        // Heavy tail: a gross outlier costs much less than under a Gaussian.
        let t = student_t4_loglik(&[10.0], &[0.0], 0.1).unwrap();
        let g = gaussian_loglik(&[10.0], &[0.0], 0.1).unwrap();
        assert!(t > g);
    }

    #[test]
    fn student_gradient_matches_differences() {
        let y = [0.3, -2.1, 0.25];
        let z = [0.1, 0.05, 0.2];
        let m = ScalarMeasurement {
            channel: Channel::Clean(0),
            sigma: Sigma::Param(0),
            likelihood: Likelihood::StudentT4,
            sampler: NoiseSampler::Gaussian,
        };
        let data = Dataset::new(vec![0.0, 1.0, 2.0], 1, y.to_vec()).unwrap();
        let s = 0.2;
        let mut gz = [0.0; 3];
        let mut gt = [0.0];
        let states = NodeStates { n: 0, q: 1, x: &[], z: &z };
        m.add_gradient(&data, &states, &[s], &mut [], &mut gz, &mut gt).unwrap();
        let f = |z: &[f64], s: f64| student_t4_loglik(&y, z, s).unwrap();
        for k in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            let fd = (f(&zp, s) - f(&zm, s)) / 2e-6;
            assert!((gz[k] - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
        let fd = (f(&z, s + 1e-7) - f(&z, s - 1e-7)) / 2e-7;
        assert!((gt[0] - fd).abs() < 1e-6 * fd.abs());
    }

    #[test]
    fn quantized_centered_mass() {
        let v = quantized_log_mass(0.0, 0.0, 0.1, 1.0);
        let expect = (normal_cdf(5.0) - normal_cdf(-5.0)).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v + 5.733e-7).abs() < 1e-9);
        // Spreading the noise puts less mass in the centre bin.
        let m: Vec<f64> = [0.1, 1.0, 10.0].iter().map(|s| quantized_log_mass(0.0, 0.0, *s, 1.0)).collect();
        assert!(m[0] > m[1] && m[1] > m[2]);
    }

    #[test]
    fn quantized_masses_sum_to_one() {
        for (z, s) in [(0.0f64, 0.05), (0.013, 0.05), (-0.31, 0.002), (1.7, 0.3)] {
            let bin = 0.05;
            let centre = (z / bin).round() as i64;
            let total: f64 = (centre - 400..=centre + 400).map(|j| quantized_log_mass(j as f64 * bin, z, s, bin).exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "z={z} s={s}: {total}");
        }
    }

    #[test]
    fn quantized_far_tail_is_finite_and_differentiable() {
        let v = quantized_log_mass(0.0, 3.0, 0.01, 0.05);
        assert!(v.is_finite() && v < -40_000.0);
        let (_, dz, ds) = quantized_log_mass_derivs(0.0, 3.0, 0.01, 0.05);
        let h = 1e-7;
        let fd = (quantized_log_mass(0.0, 3.0 + h, 0.01, 0.05) - quantized_log_mass(0.0, 3.0 - h, 0.01, 0.05)) / (2.0 * h);
        assert!((dz - fd).abs() < 1e-5 * fd.abs());
        let fds = (quantized_log_mass(0.0, 3.0, 0.01 + 1e-9, 0.05) - quantized_log_mass(0.0, 3.0, 0.01 - 1e-9, 0.05)) / 2e-9;
        assert!((ds - fds).abs() < 1e-5 * fds.abs());
    }

    #[test]
    fn quantized_rejects_off_lattice_data() {
        assert!(matches!(quantized_loglik(&[0.051], &[0.0], 0.1, 0.05), Err(Error::Input(_))));
        assert!(quantized_loglik(&[0.05, -0.1], &[0.0, 0.0], 0.1, 0.05).is_ok());
        assert!(matches!(quantized_loglik(&[0.0], &[0.0], 0.1, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn loglik_is_permutation_invariant() {
        let y = [0.3, -0.1, 0.25, 0.9];
        let z = [0.1, 0.05, 0.2, 0.7];
        let (yp, zp) = ([0.9, 0.3, 0.25, -0.1], [0.7, 0.1, 0.2, 0.05]);
        let g = (gaussian_loglik(&y, &z, 0.3).unwrap(), gaussian_loglik(&yp, &zp, 0.3).unwrap());
        let t = (student_t4_loglik(&y, &z, 0.3).unwrap(), student_t4_loglik(&yp, &zp, 0.3).unwrap());
        assert!((g.0 - g.1).abs() < 1e-14 && (t.0 - t.1).abs() < 1e-14);
    }

    #[test]
    fn outlier_mixture_moments() {
        let z = vec![0.0; 10_000];
        for (p, expect) in [(0.0, 0.2f64 * 0.2), (1.0, 1.0)] {
            let y = outlier_mixture_sample(&z, 0.2, 1.0, p, 11).unwrap();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (y.len() - 1) as f64;
            let se = expect * (2.0 / y.len() as f64).sqrt();
            assert!((var - expect).abs() < 3.0 * se, "p={p}: {var}");
        }
        assert_eq!(outlier_mixture_sample(&z, 0.2, 1.0, 0.4, 5).unwrap(), outlier_mixture_sample(&z, 0.2, 1.0, 0.4, 5).unwrap());
        assert!(outlier_mixture_sample(&z, 0.2, 1.0, 1.5, 5).is_err());
    }
}
