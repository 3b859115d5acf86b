//! The four subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdemap::grid::{sup_norm_distance, Partition};
use sdemap::metrics::{aggregate, ise, EstimatorOutcome, RunSummary, SummaryTable};
use sdemap::model::{BenchmarkSpec, Dataset};
use sdemap::objective::{
    continuous_energy_log_posterior, continuous_log_posterior, DecisionVector, Discretization, ParamLayout, Problem,
};
use sdemap::oracle::{discretize_linear, rts_smoother};
use sdemap::rng::{describe, replicate_seed};
use sdemap::sim::{generate_dataset, Scheme, Trajectory};
use sdemap::solve::{estimate, measurement_grid, EstimateResult, Estimator};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{self, num, Stamp};

/// Environment variable overriding the config's output directory.
pub const OUT_DIR_ENV: &str = "SDEMAP_OUT_DIR";

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed_override: Option<u64>,
}

/// A loaded config with its stamp and output directory.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub stamp: Stamp,
    pub out: PathBuf,
}

impl Context {
    /// The output directory is `--out`, else `$SDEMAP_OUT_DIR`, else the
    /// config's `output`, else `out`.
    pub fn new(opts: &Options) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::load(&opts.config)?;
        if let Some(s) = opts.seed_override {
            cfg.seed = s;
        }
        let out = opts
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { stamp: Stamp::new(cfg.hash()), cfg, out })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn named(spec: &BenchmarkSpec, theta: &[f64]) -> BTreeMap<String, f64> {
    spec.theta_names.iter().map(|n| n.to_string()).zip(theta.iter().copied()).collect()
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
struct SimulationRecord {
    benchmark: String,
    seed: u64,
    scheme: Scheme,
    h_sim: f64,
    t_f: f64,
    t_s: f64,
    theta: BTreeMap<String, f64>,
    x0: Vec<f64>,
    z0: Vec<f64>,
    generator: String,
    normal_sampler: String,
    left_validity_at: Option<f64>,
}

/// Simulate one dataset; writes `trajectory.csv`, `dataset.csv` and
/// `simulation.json`.
pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let spec = cfg.spec()?;
    let (traj, data) = generate_dataset(&spec, cfg.seed, &cfg.sim_config(cfg.seed))?;
    output::create_dir(&ctx.out)?;
    output::write_trajectory(&ctx.file("trajectory.csv"), &ctx.stamp, &traj)?;
    output::write_dataset(&ctx.file("dataset.csv"), &ctx.stamp, &data)?;
    let (generator, normal) = describe();
    let rec = SimulationRecord {
        benchmark: spec.name.clone(),
        seed: cfg.seed,
        scheme: traj.scheme,
        h_sim: traj.h_sim,
        t_f: spec.t_f,
        t_s: spec.t_s,
        theta: named(&spec, &traj.theta),
        x0: traj.x_at(0).to_vec(),
        z0: traj.z_at(0).to_vec(),
        generator: generator.into(),
        normal_sampler: normal.into(),
        left_validity_at: traj.left_validity_at,
    };
    output::write_json(&ctx.file("simulation.json"), &ctx.stamp, &rec)
}

/// Objective value and its parts at the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub value: f64,
    pub prior: f64,
    pub likelihood: f64,
    pub energy: f64,
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub benchmark: String,
    pub estimator: Estimator,
    pub theta: BTreeMap<String, f64>,
    pub objective: ObjectiveParts,
    pub initial_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: String,
    pub picard_iterations: usize,
    pub fixed_point_failures: usize,
    pub grid_intervals: usize,
    /// Whether `(L_f + L_h) mesh < 2`; `None` without Lipschitz constants.
    pub contraction_condition: Option<bool>,
    pub ise: Option<f64>,
    pub wall_time: f64,
}

impl EstimateRecord {
    fn new(spec: &BenchmarkSpec, estimator: Estimator, p: &Problem, r: &EstimateResult, ise: Option<f64>) -> Self {
        let rep = &r.report;
        Self {
            benchmark: spec.name.clone(),
            estimator,
            theta: named(spec, &r.theta(p)),
            objective: ObjectiveParts {
                value: rep.value,
                prior: rep.prior,
                likelihood: rep.likelihood,
                energy: rep.energy,
                correction: rep.correction,
            },
            initial_value: r.initial_value,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            termination: r.termination.name().to_string(),
            picard_iterations: r.picard_max,
            fixed_point_failures: r.fixed_point_failures,
            grid_intervals: p.grid.intervals(),
            contraction_condition: p.contraction_condition(),
            ise,
            wall_time: r.wall_time,
        }
    }

    pub fn outcome(&self) -> EstimatorOutcome {
        EstimatorOutcome {
            theta: self.theta.clone(),
            ise: self.ise.unwrap_or(f64::NAN),
            objective: self.objective.value,
            iterations: self.iterations,
            grad_norm: self.grad_norm,
            termination: self.termination.clone(),
            picard_iterations: self.picard_iterations,
            fixed_point_failures: self.fixed_point_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub benchmark: String,
    pub dataset_sha256: String,
    pub grid_refinement: u32,
    pub estimates: BTreeMap<String, EstimateRecord>,
    /// Estimators that failed before the solver ran, by label.
    pub errors: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Problems for every requested estimator on one dataset, in `cfg.runs()` order.
fn problems(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<(BenchmarkSpec, Estimator, String, Problem)>, CliError> {
    let mut out = Vec::new();
    for (bench, est, label) in cfg.runs() {
        let spec = cfg.spec_named(&bench)?;
        let layout: ParamLayout = cfg.layout(&spec)?;
        let p = Problem::from_benchmark(&spec, data.clone(), 0, layout)
            .map_err(|e| CliError::Config(format!("dataset does not fit {bench}: {e}")))?;
        out.push((spec, est, label, p));
    }
    Ok(out)
}

/// Fitted problem, result and record for one estimator, or the error text.
type Fitted = Result<(Problem, EstimateResult, EstimateRecord), String>;

fn fit(cfg: &ExperimentConfig, spec: &BenchmarkSpec, est: Estimator, p: &Problem, truth: Option<&Trajectory>) -> Fitted {
    let (q, r) = estimate(p, est, cfg.grid_refinement, &cfg.solver).map_err(|e| e.to_string())?;
    let e = match truth {
        Some(t) => Some(ise(t, &r.x_path, r.z_path()).map_err(|e| e.to_string())?),
        None => None,
    };
    let rec = EstimateRecord::new(spec, est, &q, &r, e);
    Ok((q, r, rec))
}

const NO_HINT: &str = "no Lipschitz constants for this model; the (L_f + L_h) mesh < 2 check was skipped";

/// Run every requested estimator on `--dataset`; writes `path_<label>.csv`
/// per estimator, `estimate.json` and, with `oracle = true`, `rts_oracle.csv`.
pub fn estimate_cmd(ctx: &Context, dataset: &Path) -> Result<EstimateReport, CliError> {
    let cfg = &ctx.cfg;
    let data = output::read_dataset(dataset)?;
    let spec = cfg.spec()?;
    let truth = match &cfg.truth {
        Some(p) => Some(output::read_trajectory(p, spec.model.dims().n, spec.model.dims().q)?),
        None => None,
    };
    let jobs = problems(cfg, &data)?;
    output::create_dir(&ctx.out)?;
    let mut report = EstimateReport {
        benchmark: cfg.benchmark.clone(),
        dataset_sha256: sha256_file(dataset)?,
        grid_refinement: cfg.grid_refinement,
        estimates: BTreeMap::new(),
        errors: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for (spec, est, label, p) in &jobs {
        match fit(cfg, spec, *est, p, truth.as_ref()) {
            Ok((_, r, rec)) => {
                if *est == Estimator::Map && rec.contraction_condition.is_none() && !report.warnings.iter().any(|w| w == NO_HINT)
                {
                    eprintln!("warning: {NO_HINT}");
                    report.warnings.push(NO_HINT.into());
                }
                output::write_path(&ctx.file(&format!("path_{label}.csv")), &ctx.stamp, &r.x_path, r.z_path())?;
                report.estimates.insert(label.clone(), rec);
            }
            Err(e) => {
                report.errors.insert(label.clone(), e);
            }
        }
    }
    if cfg.oracle {
        write_oracle(ctx, &spec, &data)?;
    }
    output::write_json(&ctx.file("estimate.json"), &ctx.stamp, &report)?;
    Ok(report)
}

fn write_oracle(ctx: &Context, spec: &BenchmarkSpec, data: &Dataset) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let theta = cfg.layout(spec)?.expand(&[]);
    let grid = measurement_grid(data.times(), spec.t_f)?.refine(cfg.grid_refinement);
    let cfg_err = |e: sdemap::Error| CliError::Config(format!("oracle: {e}"));
    let mut sys = discretize_linear(&spec.model, spec.prior.as_ref(), &grid, &theta).map_err(cfg_err)?;
    sys.observe(spec.measurement.as_ref(), data, &grid, &theta).map_err(cfg_err)?;
    let sm = rts_smoother(&sys)?;
    let (n, q) = (sys.n, sys.q);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("x{i}")))
        .chain((0..q).map(|i| format!("z{i}")))
        .chain((0..n).map(|i| format!("var_x{i}")))
        .chain((0..q).map(|i| format!("var_z{i}")))
        .collect();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            let (m, p) = (&sm.means[k], &sm.covariances[k]);
            std::iter::once(grid.node(k)).chain(m.iter().copied()).chain((0..n + q).map(|i| p[(i, i)])).map(num).collect()
        })
        .collect();
    output::write_csv(&ctx.file("rts_oracle.csv"), &ctx.stamp, &header, &rows)
}

/// Wall time of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub replicate: usize,
    pub label: String,
    pub seconds: f64,
}

fn replicate(cfg: &ExperimentConfig, i: usize) -> (RunSummary, Vec<Timing>) {
    let seed = replicate_seed(cfg.seed, i as u64);
    let mut run = RunSummary { replicate: i, seed, estimates: BTreeMap::new(), error: None };
    let mut timings = Vec::new();
    let sim = cfg.spec().and_then(|s| generate_dataset(&s, seed, &cfg.sim_config(seed)).map_err(CliError::from));
    let (traj, data) = match sim {
        Ok(v) => v,
        Err(e) => {
            run.error = Some(format!("simulation: {e}"));
            return (run, timings);
        }
    };
    let jobs = match problems(cfg, &data) {
        Ok(j) => j,
        Err(e) => {
            run.error = Some(e.to_string());
            return (run, timings);
        }
    };
    let mut errors = Vec::new();
    for (spec, est, label, p) in &jobs {
        match fit(cfg, spec, *est, p, Some(&traj)) {
            Ok((_, _, rec)) => {
                timings.push(Timing { replicate: i, label: label.clone(), seconds: rec.wall_time });
                run.estimates.insert(label.clone(), rec.outcome());
            }
            Err(e) => errors.push(format!("{label}: {e}")),
        }
    }
    if !errors.is_empty() {
        run.error = Some(errors.join("; "));
    }
    (run, timings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub benchmark: String,
    pub replicates: usize,
    pub completed: usize,
    pub summary: SummaryTable,
}

/// Stamped JSONL line for one replicate.
pub fn run_line(stamp: &Stamp, run: &RunSummary) -> String {
    let mut v = serde_json::to_value(stamp).expect("stamp serializes");
    if let (Some(o), serde_json::Value::Object(b)) = (v.as_object_mut(), serde_json::to_value(run).expect("run serializes")) {
        o.extend(b);
    }
    serde_json::to_string(&v).expect("json serializes")
}

/// Replicates `0..R` with seeds `seed + i`, run on `workers` threads.
/// Writes `runs.jsonl` (ordered by replicate), `aggregate.json` and
/// `timings.csv`. Fails with [`CliError::Incomplete`] when fewer than 90%
/// of the replicates complete.
pub fn montecarlo(ctx: &Context, workers: Option<usize>) -> Result<MonteCarloReport, CliError> {
    let cfg = Arc::new(ctx.cfg.clone());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Compute(e.to_string()))?;
    let results: Vec<(RunSummary, Vec<Timing>)> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(|i| replicate(&cfg, i)).collect());
    let runs: Vec<RunSummary> = results.iter().map(|r| r.0.clone()).collect();
    output::create_dir(&ctx.out)?;
    let mut lines = String::new();
    for r in &runs {
        lines.push_str(&run_line(&ctx.stamp, r));
        lines.push('\n');
    }
    let path = ctx.file("runs.jsonl");
    std::fs::write(&path, lines).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<String>> =
        results.iter().flat_map(|r| r.1.iter().map(|t| vec![t.replicate.to_string(), t.label.clone(), num(t.seconds)])).collect();
    output::write_csv(&ctx.file("timings.csv"), &ctx.stamp, &["replicate".into(), "label".into(), "wall_time".into()], &rows)?;
    let completed = runs.iter().filter(|r| r.error.is_none()).count();
    let report =
        MonteCarloReport { benchmark: cfg.benchmark.clone(), replicates: cfg.replicates, completed, summary: aggregate(&runs) };
    output::write_json(&ctx.file("aggregate.json"), &ctx.stamp, &report)?;
    if completed * 10 < cfg.replicates * 9 {
        return Err(CliError::Incomplete { completed, total: cfg.replicates });
    }
    Ok(report)
}

/// One row of the mesh-refinement table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub refinement: u32,
    pub estimator: Estimator,
    pub theta: Vec<f64>,
    /// Sup-norm distance of the noisy path to the previous refinement.
    pub sup_distance: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: String,
}

/// One row of the fixed-path functional table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalRow {
    pub delta: f64,
    pub trapezoidal: f64,
    pub continuous: f64,
    pub euler: f64,
    pub continuous_energy: f64,
}

impl FunctionalRow {
    pub fn trapezoidal_gap(&self) -> f64 {
        (self.trapezoidal - self.continuous).abs()
    }

    pub fn euler_gap(&self) -> f64 {
        (self.euler - self.continuous_energy).abs()
    }
}

/// Discretized and continuous log-posteriors of the configured test path,
/// without measurements, at the benchmark's parameters with known values applied.
pub fn functional_table(cfg: &ExperimentConfig) -> Result<Vec<FunctionalRow>, CliError> {
    let spec = cfg.spec()?;
    let d = spec.model.dims();
    if d.n != 1 || d.q != 1 {
        return Err(CliError::Config("convergence.path: the test path needs a scalar noisy and clean state".into()));
    }
    let mut theta = spec.theta_nominal.clone();
    for (name, v) in &cfg.known {
        if let Some(i) = spec.theta_index(name) {
            theta[i] = *v;
        }
    }
    let tp = &cfg.convergence.path;
    let (horizon, z0) = (tp.horizon, tp.z0());
    let path = |t: f64| {
        let (x, dx) = tp.x(t);
        (vec![x], vec![dx])
    };
    let empty = Dataset::empty(spec.measurement.output_dim());
    let quad = (horizon / cfg.convergence.quad_step).round().max(1.0) as usize;
    let (model, prior, meas) = (&spec.model, spec.prior.as_ref(), spec.measurement.as_ref());
    let continuous = continuous_log_posterior(model, prior, meas, &empty, &path, &[z0], &theta, horizon, quad)?;
    let continuous_energy = continuous_energy_log_posterior(model, prior, meas, &empty, &path, &[z0], &theta, horizon, quad)?;
    let mut rows = Vec::new();
    for delta in &cfg.convergence.deltas {
        let grid = Partition::uniform(horizon, (horizon / delta).round().max(1.0) as usize)?;
        let p = Problem::new(
            spec.model.clone(),
            spec.prior.clone(),
            spec.measurement.clone(),
            empty.clone(),
            grid.clone(),
            ParamLayout::all_free(d.m),
        )?;
        let v = DecisionVector::new(1, grid.nodes().iter().map(|t| tp.x(*t).0).collect(), vec![z0], theta.clone())?;
        rows.push(FunctionalRow {
            delta: grid.mesh(),
            trapezoidal: p.evaluate(Discretization::Trapezoidal, &v)?.value,
            continuous,
            euler: p.evaluate(Discretization::Euler, &v)?.value,
            continuous_energy,
        });
    }
    Ok(rows)
}

/// Both estimators at each configured refinement on the dataset of `seed`,
/// plus the fixed-path functional table. Writes `convergence.csv` and
/// `functional.csv`.
pub fn convergence(ctx: &Context) -> Result<(Vec<ConvergenceRow>, Vec<FunctionalRow>), CliError> {
    let cfg = &ctx.cfg;
    let spec = cfg.spec()?;
    let (_, data) = generate_dataset(&spec, cfg.seed, &cfg.sim_config(cfg.seed))?;
    let p = Problem::from_benchmark(&spec, data, 0, cfg.layout(&spec)?)?;
    let mut rows = Vec::new();
    for est in &cfg.estimators {
        let mut prev = None;
        for r in &cfg.convergence.refinements {
            let (q, res) = estimate(&p, *est, *r, &cfg.solver)?;
            let sup = match &prev {
                Some(x) => Some(sup_norm_distance(x, &res.x_path)?),
                None => None,
            };
            rows.push(ConvergenceRow {
                refinement: *r,
                estimator: *est,
                theta: res.theta(&q),
                sup_distance: sup,
                objective: res.report.value,
                iterations: res.iterations,
                grad_norm: res.grad_norm,
                termination: res.termination.name().to_string(),
            });
            prev = Some(res.x_path);
        }
    }
    let functional = functional_table(cfg)?;
    output::create_dir(&ctx.out)?;
    let header: Vec<String> = ["refinement", "estimator"]
        .iter()
        .map(|s| s.to_string())
        .chain(spec.theta_names.iter().map(|n| format!("theta_{n}")))
        .chain(["sup_distance", "objective", "iterations", "grad_norm", "termination"].iter().map(|s| s.to_string()))
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.refinement.to_string(), r.estimator.name().to_string()];
            v.extend(r.theta.iter().map(|t| num(*t)));
            v.push(r.sup_distance.map(num).unwrap_or_default());
            v.extend([num(r.objective), r.iterations.to_string(), num(r.grad_norm), r.termination.clone()]);
            v
        })
        .collect();
    output::write_csv(&ctx.file("convergence.csv"), &ctx.stamp, &header, &body)?;
    let header: Vec<String> =
        ["delta", "trapezoidal", "continuous", "trapezoidal_gap", "euler", "continuous_energy", "euler_gap"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let body: Vec<Vec<String>> = functional
        .iter()
        .map(|f| {
            [f.delta, f.trapezoidal, f.continuous, f.trapezoidal_gap(), f.euler, f.continuous_energy, f.euler_gap()]
                .into_iter()
                .map(num)
                .collect()
        })
        .collect();
    output::write_csv(&ctx.file("functional.csv"), &ctx.stamp, &header, &body)?;
    Ok((rows, functional))
}
