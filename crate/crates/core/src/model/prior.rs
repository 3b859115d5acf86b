use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};

use crate::rng::{standard_normal, SimRng};

/// Joint prior density `pi(x0, z0, theta)`.
///
/// Log-densities may drop additive constants. They are `-inf` outside the
/// support, and gradients are only requested inside it.
pub trait Prior: Send + Sync {
    fn log_density(&self, x0: &[f64], z0: &[f64], theta: &[f64]) -> f64;

    /// Add the gradient of the log-density into `gx0`, `gz0` and `gtheta`.
    fn add_gradient(&self, x0: &[f64], z0: &[f64], theta: &[f64], gx0: &mut [f64], gz0: &mut [f64], gtheta: &mut [f64]);

    fn in_support(&self, theta: &[f64]) -> bool;

    fn sample(&self, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>, Vec<f64>);

    /// Mean and covariance of `(x0, z0)` when that marginal is Gaussian.
    fn gaussian_initial(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    /// Starting value for parameter `i` when nothing better is known.
    fn theta_guess(&self, i: usize) -> f64;
}

/// One-dimensional prior factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Gamma with shape `r` and scale `s`: log-density `(r-1) ln v - v / s`.
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Improper constant density. Its sampler returns 0.
    Flat,
}

impl Marginal {
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let u = (v - mean) / sd;
                -0.5 * u * u
            }
            Marginal::Gamma { shape, scale } => {
                if v > 0.0 {
                    (shape - 1.0) * v.ln() - v / scale
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Flat => 0.0,
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => -(v - mean) / (sd * sd),
            Marginal::Gamma { shape, scale } => (shape - 1.0) / v - 1.0 / scale,
            Marginal::Flat => 0.0,
        }
    }

    pub fn in_support(&self, v: f64) -> bool {
        match self {
            Marginal::Gamma { .. } => v > 0.0,
            _ => v.is_finite(),
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * standard_normal(rng),
            Marginal::Gamma { shape, scale } => Gamma::new(shape, scale).expect("valid gamma parameters").sample(rng),
            Marginal::Flat => 0.0,
        }
    }

    /// Mode for unimodal factors (mean for a gamma with shape below 1).
    pub fn guess(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Gamma { shape, scale } if shape >= 1.0 => (shape - 1.0) * scale,
            Marginal::Gamma { shape, scale } => shape * scale,
            Marginal::Flat => 0.0,
        }
    }
}

/// Product of independent one-dimensional factors.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentPrior {
    pub x0: Vec<Marginal>,
    pub z0: Vec<Marginal>,
    pub theta: Vec<Marginal>,
}

impl IndependentPrior {
    pub fn new(x0: Vec<Marginal>, z0: Vec<Marginal>, theta: Vec<Marginal>) -> Self {
        Self { x0, z0, theta }
    }
}

impl Prior for IndependentPrior {
    fn log_density(&self, x0: &[f64], z0: &[f64], theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let terms = self.x0.iter().zip(x0).chain(self.z0.iter().zip(z0)).chain(self.theta.iter().zip(theta));
        terms.map(|(m, v)| m.log_density(*v)).sum()
    }

    fn add_gradient(&self, x0: &[f64], z0: &[f64], theta: &[f64], gx0: &mut [f64], gz0: &mut [f64], gtheta: &mut [f64]) {
        for ((m, v), g) in self.x0.iter().zip(x0).zip(gx0) {
            *g += m.derivative(*v);
        }
        for ((m, v), g) in self.z0.iter().zip(z0).zip(gz0) {
            *g += m.derivative(*v);
        }
        for ((m, v), g) in self.theta.iter().zip(theta).zip(gtheta) {
            *g += m.derivative(*v);
        }
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        self.theta.iter().zip(theta).all(|(m, v)| m.in_support(*v))
    }

    fn sample(&self, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x0 = self.x0.iter().map(|m| m.sample(rng)).collect();
        let z0 = self.z0.iter().map(|m| m.sample(rng)).collect();
        let theta = self.theta.iter().map(|m| m.sample(rng)).collect();
        (x0, z0, theta)
    }

    fn gaussian_initial(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let all: Vec<&Marginal> = self.x0.iter().chain(&self.z0).collect();
        let mut mean = DVector::zeros(all.len());
        let mut cov = DMatrix::zeros(all.len(), all.len());
        for (i, m) in all.iter().enumerate() {
            match m {
                Marginal::Normal { mean: mu, sd } => {
                    mean[i] = *mu;
                    cov[(i, i)] = sd * sd;
                }
                _ => return None,
            }
        }
        Some((mean, cov))
    }

    fn theta_guess(&self, i: usize) -> f64 {
        self.theta[i].guess()
    }
}
