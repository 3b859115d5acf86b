//! Experiment configuration files.
//!
//! Configs are TOML. Unknown keys are rejected, and every validation error
//! names the offending field.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdemap::model::{benchmark, benchmark_names, BenchmarkOptions, BenchmarkSpec};
use sdemap::objective::ParamLayout;
use sdemap::sim::{Scheme, SimConfig};
use sdemap::solve::{Estimator, SolverConfig};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Measurement and sampling settings. Outlier settings apply only to the
/// outlier-mixture benchmarks, quantizer settings only to `holmes-rand`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementOptions {
    pub t_s: Option<f64>,
    pub p_o: Option<f64>,
    pub sigma_o: Option<f64>,
    pub sigma_r: Option<f64>,
    pub l_b: Option<f64>,
    pub sigma_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptions {
    pub h_sim: f64,
    pub scheme: Scheme,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        let d = SimConfig::default();
        Self { h_sim: d.h_sim, scheme: d.scheme }
    }
}

/// Smooth test path `x(t) = amplitude sin(frequency t + phase)` on
/// `[0, horizon]`. The clean start defaults to the antiderivative
/// `-(amplitude / frequency) cos(phase)`, which matches `h = x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestPath {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub horizon: f64,
    pub z0: Option<f64>,
}

impl Default for TestPath {
    fn default() -> Self {
        Self { amplitude: 1.0, frequency: 1.0, phase: 0.0, horizon: 2.0 * PI, z0: None }
    }
}

impl TestPath {
    pub fn x(&self, t: f64) -> (f64, f64) {
        let a = self.frequency * t + self.phase;
        (self.amplitude * a.sin(), self.amplitude * self.frequency * a.cos())
    }

    pub fn z0(&self) -> f64 {
        self.z0.unwrap_or(-self.amplitude / self.frequency * self.phase.cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceOptions {
    pub refinements: Vec<u32>,
    /// Mesh widths of the fixed-path functional table.
    pub deltas: Vec<f64>,
    /// Quadrature step of the continuous functionals.
    pub quad_step: f64,
    pub path: TestPath,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            refinements: vec![0, 1, 2, 3],
            deltas: vec![0.1, 0.05, 0.025, 0.0125],
            quad_step: 0.001,
            path: TestPath::default(),
        }
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Map, Estimator::Mee]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub t_f: f64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Further benchmarks whose likelihoods are fitted to the same datasets.
    #[serde(default)]
    pub alternates: Vec<String>,
    #[serde(default)]
    pub grid_refinement: u32,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Dataset seed; replicate `i` uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    /// Write the Kalman smoother path next to the estimates.
    #[serde(default)]
    pub oracle: bool,
    /// Trajectory CSV used for the ISE of `estimate`, relative to the config file.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    /// Known parameter values by name; the rest are estimated.
    #[serde(default)]
    pub known: BTreeMap<String, f64>,
    #[serde(default)]
    pub measurement: MeasurementOptions,
    #[serde(default)]
    pub simulation: SimulationOptions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub convergence: ConvergenceOptions,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

fn check_positive(name: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(field(name, format!("must be positive, got {x}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse and validate a config file. A relative `truth` path is
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(t) = &cfg.truth {
            if t.is_relative() {
                cfg.truth = Some(path.parent().unwrap_or(Path::new(".")).join(t));
            }
        }
        Ok(cfg)
    }

    pub fn benchmark_options(&self) -> BenchmarkOptions {
        let d = BenchmarkOptions::default();
        let m = &self.measurement;
        BenchmarkOptions {
            t_s: m.t_s.unwrap_or(d.t_s),
            p_o: m.p_o.unwrap_or(d.p_o),
            sigma_o: m.sigma_o.unwrap_or(d.sigma_o),
            sigma_r: m.sigma_r.unwrap_or(d.sigma_r),
            l_b: m.l_b.unwrap_or(d.l_b),
            sigma_y: m.sigma_y.unwrap_or(d.sigma_y),
            ..d
        }
    }

    pub fn spec(&self) -> Result<BenchmarkSpec, CliError> {
        self.spec_named(&self.benchmark)
    }

    pub fn spec_named(&self, name: &str) -> Result<BenchmarkSpec, CliError> {
        benchmark(name, self.t_f, &self.benchmark_options()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig { h_sim: self.simulation.h_sim, scheme: self.simulation.scheme, seed }
    }

    pub fn layout(&self, spec: &BenchmarkSpec) -> Result<ParamLayout, CliError> {
        let mut fixed = Vec::new();
        for (name, v) in &self.known {
            let i = spec.theta_index(name).ok_or_else(|| {
                field(
                    &format!("known.{name}"),
                    format!("not a parameter of {} (expected one of {})", spec.name, spec.theta_names.join(", ")),
                )
            })?;
            fixed.push((i, *v));
        }
        ParamLayout::with_fixed(spec.theta_names.len(), &fixed).map_err(|e| field("known", e))
    }

    /// Label of an estimator fitted with `bench`: the bare estimator name for
    /// the primary benchmark, `name@bench` for an alternate.
    pub fn label(&self, estimator: Estimator, bench: &str) -> String {
        if bench == self.benchmark {
            estimator.name().to_string()
        } else {
            format!("{}@{bench}", estimator.name())
        }
    }

    /// `(benchmark, estimator, label)` for every requested estimation.
    pub fn runs(&self) -> Vec<(String, Estimator, String)> {
        std::iter::once(&self.benchmark)
            .chain(&self.alternates)
            .flat_map(|b| self.estimators.iter().map(move |e| (b.clone(), *e, self.label(*e, b))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !benchmark_names().contains(&self.benchmark.as_str()) {
            return Err(field(
                "benchmark",
                format!("unknown benchmark {:?}; expected one of {}", self.benchmark, benchmark_names().join(", ")),
            ));
        }
        check_positive("t_f", Some(self.t_f))?;
        let m = &self.measurement;
        for (name, v) in [
            ("measurement.t_s", m.t_s),
            ("measurement.sigma_o", m.sigma_o),
            ("measurement.sigma_r", m.sigma_r),
            ("measurement.l_b", m.l_b),
            ("measurement.sigma_y", m.sigma_y),
        ] {
            check_positive(name, v)?;
        }
        if let Some(p) = m.p_o {
            if !(0.0..=1.0).contains(&p) {
                return Err(field("measurement.p_o", format!("must lie in [0, 1], got {p}")));
            }
        }
        let outliers = ["duffing-student-t", "duffing-outlier-gaussian"];
        let all: Vec<&str> = std::iter::once(self.benchmark.as_str()).chain(self.alternates.iter().map(String::as_str)).collect();
        if !all.iter().any(|b| outliers.contains(b)) {
            for (name, v) in [("measurement.p_o", m.p_o), ("measurement.sigma_o", m.sigma_o), ("measurement.sigma_r", m.sigma_r)]
            {
                if v.is_some() {
                    return Err(field(name, "only applies to the outlier-mixture benchmarks"));
                }
            }
        }
        if !all.contains(&"holmes-rand") {
            for (name, v) in [("measurement.l_b", m.l_b), ("measurement.sigma_y", m.sigma_y)] {
                if v.is_some() {
                    return Err(field(name, "only applies to holmes-rand"));
                }
            }
        }
        if self.estimators.is_empty() {
            return Err(field("estimators", "at least one estimator is required"));
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(e) {
                return Err(field("estimators", format!("{} listed twice", e.name())));
            }
        }
        if self.replicates == 0 {
            return Err(field("replicates", "must be at least 1"));
        }
        if self.grid_refinement > 8 {
            return Err(field("grid_refinement", format!("at most 8 supported, got {}", self.grid_refinement)));
        }
        check_positive("simulation.h_sim", Some(self.simulation.h_sim))?;
        self.solver.validate().map_err(|e| field("solver", e))?;
        let spec = self.spec().map_err(|e| field("t_f", e))?;
        let layout = self.layout(&spec)?;
        for (name, v) in &self.known {
            if !v.is_finite() {
                return Err(field(&format!("known.{name}"), format!("must be finite, got {v}")));
            }
        }
        for (i, alt) in self.alternates.iter().enumerate() {
            if !benchmark_names().contains(&alt.as_str()) {
                return Err(field(&format!("alternates[{i}]"), format!("unknown benchmark {alt:?}")));
            }
            let other = self.spec_named(alt)?;
            if other.theta_names != spec.theta_names || other.t_s != spec.t_s {
                return Err(field(&format!("alternates[{i}]"), format!("{alt} does not share the parameters of {}", spec.name)));
            }
        }
        if self.oracle && layout.free_count() > 0 {
            return Err(field("oracle", "the smoother needs every parameter listed under [known]"));
        }
        let c = &self.convergence;
        if c.refinements.is_empty() || c.refinements.iter().any(|r| *r > 8) {
            return Err(field("convergence.refinements", "needs one to several levels, each at most 8"));
        }
        if c.deltas.iter().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(field("convergence.deltas", "mesh widths must be positive"));
        }
        check_positive("convergence.quad_step", Some(c.quad_step))?;
        check_positive("convergence.path.horizon", Some(c.path.horizon))?;
        if c.path.frequency == 0.0 && c.path.z0.is_none() {
            return Err(field("convergence.path.z0", "required when the frequency is zero"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The output directory is not part
    /// of the hash.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
