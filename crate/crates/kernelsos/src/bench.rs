//! Reproducible experiment harness: one JSON config schema for all
//! experiment kinds, seeded benchmark suites, JSON-lines result files,
//! and CSV plot-table emission.

use crate::kernels::KernelSpec;
use crate::problems::{
    self, best_sample_baseline, generate_ro_instance, local_refine, SamplingMode,
};
use crate::restarts::{self, RestartSchedule, StageRecord};
use crate::sdp::SolverOptions;
use crate::step::{sample_uniform, BoxDomain, ObjectiveOracle};
use crate::trajopt::{self, PendulumParams, RolloutProblem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unknown plot view {0:?}")]
    UnknownView(String),
    #[error("unknown test function {0:?}")]
    UnknownFunction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RoBench,
    ToBench,
    InitBench,
    SolveFunction,
}

/// One schema for all experiment kinds; kind-specific fields have
/// defaults and are ignored where irrelevant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,

    /// Kernel family: "gaussian" or "laplace".
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Samples per restart.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Number of restarts w (the run has w + 1 stages).
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_newton_budget")]
    pub newton_budget: usize,

    // ro-bench
    #[serde(default = "default_noise_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_anchor_count")]
    pub anchors: usize,

    // to-bench: (samples, restarts) couples swept against total budget.
    #[serde(default = "default_couples")]
    pub couples: Vec<[usize; 2]>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_links")]
    pub links: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_control_weight")]
    pub control_cost_weight: f64,
    #[serde(default = "default_torque_limit")]
    pub torque_limit: f64,

    // init-bench
    #[serde(default = "default_init_samples")]
    pub init_samples: usize,
    #[serde(default = "default_refine_iters")]
    pub refine_iters: usize,
    #[serde(default = "default_refine_tol")]
    pub refine_tolerance: f64,

    // solve-function
    #[serde(default)]
    pub function: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_kernel() -> String {
    "gaussian".into()
}
fn default_restarts() -> usize {
    2
}
fn default_decay() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_newton_budget() -> usize {
    100
}
fn default_noise_levels() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2]
}
fn default_anchor_count() -> usize {
    5
}
fn default_couples() -> Vec<[usize; 2]> {
    vec![[24, 4], [99, 4], [199, 9]]
}
fn default_horizon() -> usize {
    50
}
fn default_links() -> usize {
    1
}
fn default_dt() -> f64 {
    0.05
}
fn default_control_weight() -> f64 {
    1e-3
}
fn default_torque_limit() -> f64 {
    2.0
}
fn default_init_samples() -> usize {
    100
}
fn default_refine_iters() -> usize {
    100
}
fn default_refine_tol() -> f64 {
    1e-4
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            epsilon: self.epsilon,
            max_newton_steps: self.newton_budget,
            feasibility_tol: 1e-6,
        }
    }

    fn kernel_spec(&self, sigma: f64) -> Result<KernelSpec, BenchError> {
        match self.kernel.as_str() {
            "gaussian" => KernelSpec::gaussian(sigma),
            "laplace" => KernelSpec::laplace(sigma),
            other => {
                return Err(BenchError::Config(format!(
                    "unsupported kernel family {other:?} (use gaussian or laplace)"
                )))
            }
        }
        .map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// One result row; every row carries its seed and the hyperparameter
/// fingerprint needed to reproduce it standalone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub seed: u64,
    pub method: String,
    pub params: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StageRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    fn ok(
        experiment: &str,
        seed: u64,
        method: &str,
        params: serde_json::Value,
        metrics: BTreeMap<String, f64>,
    ) -> Self {
        ResultRecord {
            experiment: experiment.into(),
            seed,
            method: method.into(),
            params,
            metrics,
            trace: None,
            error: None,
        }
    }

    fn failed(experiment: &str, seed: u64, method: &str, params: serde_json::Value, msg: String) -> Self {
        ResultRecord {
            experiment: experiment.into(),
            seed,
            method: method.into(),
            params,
            metrics: BTreeMap::new(),
            trace: None,
            error: Some(msg),
        }
    }
}

fn metric(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Dispatch on the configured experiment kind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, BenchError> {
    match config.kind {
        ExperimentKind::RoBench => run_ro_bench(config),
        ExperimentKind::ToBench => run_to_bench(config),
        ExperimentKind::InitBench => run_init_bench(config),
        ExperimentKind::SolveFunction => run_solve_function(config),
    }
}

/// Range-only localization noise sweep: KernelSOS on both cost
/// formulations, the best-sample baseline at equal budget, and the
/// pattern-search refiner started at the ground truth.
pub fn run_ro_bench(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, BenchError> {
    let n = config.samples.unwrap_or(36);
    let w = config.restarts;
    let lambda = config.lambda.unwrap_or(1e-3);
    let budget = (w + 1) * (n + 1);
    let opts = config.solver_options();
    let mut records = Vec::new();

    for &noise in &config.noise_levels {
        for &seed in &config.seeds {
            // Instance seed mixes the noise level in so each cell gets an
            // independent instance while staying reproducible.
            let instance_seed = seed ^ (noise.to_bits().rotate_left(17));
            let instance = generate_ro_instance(instance_seed, config.anchors, noise);
            let gt = instance.ground_truth;
            let err_to_gt =
                |p: &[f64]| ((p[0] - gt[0]).powi(2) + (p[1] - gt[1]).powi(2)).sqrt();
            let params = serde_json::json!({
                "noise": noise, "anchors": config.anchors, "samples": n,
                "restarts": w, "decay": config.decay, "lambda": lambda,
                "instance_seed": instance_seed,
            });

            for (method, squared, sigma) in [
                ("kernelsos-sq", true, config.sigma.unwrap_or(1.4)),
                ("kernelsos-nonsq", false, 1.0),
            ] {
                let oracle = if squared {
                    problems::ro_oracle_sq(&instance)
                } else {
                    problems::ro_oracle_nonsq(&instance)
                };
                let kernel = config.kernel_spec(sigma)?;
                let center = config.center.clone().unwrap_or_else(|| vec![0.0, 0.0]);
                let radius = config.radius.unwrap_or(1.0);
                let schedule = RestartSchedule {
                    initial_center: center.clone(),
                    initial_radius: radius,
                    restarts: w,
                    decay: config.decay,
                    samples_per_restart: n,
                    initial_kernel_scale: sigma,
                    lambda,
                    // The target is known to lie in the box, so keep the
                    // search there (the baseline is box-constrained too).
                    hard_domain: Some(BoxDomain::new(center, radius)),
                };
                match restarts::optimize(&oracle, &kernel, &schedule, &opts, seed) {
                    Ok(run) => records.push(ResultRecord::ok(
                        "ro-bench",
                        seed,
                        method,
                        params.clone(),
                        metric(&[
                            ("noise", noise),
                            ("error", err_to_gt(&run.best_point)),
                            ("cost", run.best_value),
                            ("evaluations", run.total_evaluations as f64),
                        ]),
                    )),
                    Err(e) => records.push(ResultRecord::failed(
                        "ro-bench",
                        seed,
                        method,
                        params.clone(),
                        e.to_string(),
                    )),
                }
            }

            // Equal-budget best-sample baseline on the non-squared cost.
            let oracle = problems::ro_oracle_nonsq(&instance);
            let domain = BoxDomain::new(vec![0.0, 0.0], config.radius.unwrap_or(1.0));
            let (p, v) = best_sample_baseline(&oracle, &domain, budget, seed, SamplingMode::Uniform);
            records.push(ResultRecord::ok(
                "ro-bench",
                seed,
                "best-sample",
                params.clone(),
                metric(&[
                    ("noise", noise),
                    ("error", err_to_gt(&p)),
                    ("cost", v),
                    ("evaluations", budget as f64),
                ]),
            ));

            let oracle = problems::ro_oracle_nonsq(&instance);
            let refined = local_refine(&oracle, &gt, 1e-9);
            records.push(ResultRecord::ok(
                "ro-bench",
                seed,
                "local-from-gt",
                params.clone(),
                metric(&[
                    ("noise", noise),
                    ("error", err_to_gt(&refined.point)),
                    ("cost", refined.value),
                    ("evaluations", oracle.evaluation_count() as f64),
                ]),
            ));
        }
    }
    Ok(records)
}

fn swing_up_problem(config: &ExperimentConfig) -> RolloutProblem {
    let params = match config.links {
        2 => PendulumParams::double(config.dt, config.horizon, Some(config.torque_limit)),
        _ => PendulumParams::single(config.dt, config.horizon, Some(config.torque_limit)),
    };
    RolloutProblem::swing_up(params, config.control_cost_weight)
}

/// Default trajectory-optimization kernel scale: on the order of typical
/// pairwise distances between random control sequences in the torque box.
fn to_default_sigma(radius: f64, dim: usize) -> f64 {
    radius * (dim as f64).sqrt()
}

fn to_schedule(config: &ExperimentConfig, n: usize, w: usize, dim: usize) -> RestartSchedule {
    let radius = config.radius.unwrap_or(config.torque_limit);
    RestartSchedule {
        initial_center: config.center.clone().unwrap_or_else(|| vec![0.0; dim]),
        initial_radius: radius,
        restarts: w,
        decay: config.decay,
        samples_per_restart: n,
        initial_kernel_scale: config.sigma.unwrap_or_else(|| to_default_sigma(radius, dim)),
        lambda: config.lambda.unwrap_or(1e-3),
        hard_domain: None,
    }
}

/// Budget sweep on the swing-up task: normalized cost (relative to the
/// zero-control sequence) per total rollout budget.
pub fn run_to_bench(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, BenchError> {
    let problem = swing_up_problem(config);
    let dim = problem.control_dim();
    let zero_cost = trajopt::to_cost(&problem, &vec![0.0; dim])
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let opts = config.solver_options();
    let kernel_family = if config.kernel == "gaussian" && config.sigma.is_none() {
        // Rollout costs are not smooth enough for the Gaussian default.
        "laplace".to_string()
    } else {
        config.kernel.clone()
    };
    let mut cfg = config.clone();
    cfg.kernel = kernel_family;

    let mut records = Vec::new();
    for &[n, w] in &config.couples {
        let budget = (w + 1) * (n + 1);
        let schedule = to_schedule(&cfg, n, w, dim);
        let params = serde_json::json!({
            "samples": n, "restarts": w, "budget": budget,
            "sigma": schedule.initial_kernel_scale, "lambda": schedule.lambda,
            "decay": cfg.decay, "horizon": cfg.horizon, "links": cfg.links,
        });
        for &seed in &config.seeds {
            let oracle = trajopt::as_oracle(&problem);
            let kernel = cfg.kernel_spec(schedule.initial_kernel_scale)?;
            match restarts::optimize(&oracle, &kernel, &schedule, &opts, seed) {
                Ok(run) => records.push(ResultRecord::ok(
                    "to-bench",
                    seed,
                    "kernelsos",
                    params.clone(),
                    metric(&[
                        ("budget", budget as f64),
                        ("cost", run.best_value),
                        ("normalized_cost", run.best_value / zero_cost),
                        ("evaluations", run.total_evaluations as f64),
                    ]),
                )),
                Err(e) => records.push(ResultRecord::failed(
                    "to-bench",
                    seed,
                    "kernelsos",
                    params.clone(),
                    e.to_string(),
                )),
            }
        }
    }
    Ok(records)
}

/// Initialization study: refine from one random sequence, from the best
/// of `init_samples` random sequences, and from a KernelSOS step with
/// `init_samples` samples and no restarts.
pub fn run_init_bench(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, BenchError> {
    let problem = swing_up_problem(config);
    let dim = problem.control_dim();
    let domain = BoxDomain::new(vec![0.0; dim], config.radius.unwrap_or(config.torque_limit));
    let opts = config.solver_options();
    let n_init = config.init_samples;
    let mut cfg = config.clone();
    if config.kernel == "gaussian" && config.sigma.is_none() {
        cfg.kernel = "laplace".to_string();
    }
    let sigma = cfg
        .sigma
        .unwrap_or_else(|| to_default_sigma(domain.radius, dim));
    let lambda = cfg.lambda.unwrap_or(1e-3);
    let params = serde_json::json!({
        "init_samples": n_init, "sigma": sigma, "lambda": lambda,
        "horizon": cfg.horizon, "links": cfg.links,
        "refine_iters": cfg.refine_iters, "refine_tolerance": cfg.refine_tolerance,
    });

    let mut records = Vec::new();
    for &seed in &config.seeds {
        // All three arms draw from the same sample stream so arm (b) is a
        // superset of arm (a).
        let pool = sample_uniform(&domain, n_init, seed.wrapping_add(0x1234));
        let costs: Vec<f64> = pool
            .iter()
            .map(|u| trajopt::to_cost(&problem, &u.as_slice().to_vec()).unwrap_or(f64::INFINITY))
            .collect();

        let random_u = pool[0].as_slice().to_vec();
        let best_idx = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let best_u = pool[best_idx].as_slice().to_vec();

        let arms: Vec<(&str, Vec<f64>, f64, f64)> = {
            let mut arms = vec![
                ("random", random_u, costs[0], 1.0),
                ("best-sample", best_u, costs[best_idx], n_init as f64),
            ];
            let oracle = trajopt::as_oracle(&problem);
            let kernel = cfg.kernel_spec(sigma)?;
            match crate::step::ksos_step_with_samples(
                &oracle,
                &domain,
                &kernel,
                lambda,
                pool.clone(),
                &opts,
            ) {
                Ok(step) => {
                    let (u, value) = step.chosen();
                    arms.push(("kernelsos", u.to_vec(), value, (n_init + 1) as f64));
                }
                Err(e) => {
                    records.push(ResultRecord::failed(
                        "init-bench",
                        seed,
                        "kernelsos",
                        params.clone(),
                        e.to_string(),
                    ));
                }
            }
            arms
        };

        for (method, u0, init_cost, init_evals) in arms {
            let start = Instant::now();
            match trajopt::shooting_refine(&problem, &u0, cfg.refine_iters, cfg.refine_tolerance) {
                Ok(result) => {
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    records.push(ResultRecord::ok(
                        "init-bench",
                        seed,
                        method,
                        params.clone(),
                        metric(&[
                            ("initial_cost", init_cost),
                            ("final_cost", result.cost),
                            ("iterations", result.iterations as f64),
                            ("init_evaluations", init_evals),
                            ("wall_time_ms", wall_ms),
                        ]),
                    ));
                }
                Err(e) => records.push(ResultRecord::failed(
                    "init-bench",
                    seed,
                    method,
                    params.clone(),
                    e.to_string(),
                )),
            }
        }
    }
    Ok(records)
}

/// Run the full restart loop on a named analytic test function.
pub fn run_solve_function(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, BenchError> {
    let name = config
        .function
        .clone()
        .ok_or_else(|| BenchError::Config("solve-function requires a `function` name".into()))?;
    let (dim, make_oracle): (usize, fn() -> ObjectiveOracle) = match name.as_str() {
        "two-basin" => (1, problems::two_basin_oracle),
        "quadratic-bowl" => (2, || problems::quadratic_bowl_oracle(2)),
        other => return Err(BenchError::UnknownFunction(other.to_string())),
    };
    let sigma = config.sigma.unwrap_or(0.5);
    let schedule = RestartSchedule {
        initial_center: config.center.clone().unwrap_or_else(|| vec![0.0; dim]),
        initial_radius: config.radius.unwrap_or(1.0),
        restarts: config.restarts,
        decay: config.decay,
        samples_per_restart: config.samples.unwrap_or(30),
        initial_kernel_scale: sigma,
        lambda: config.lambda.unwrap_or(1e-4),
        hard_domain: None,
    };
    let opts = config.solver_options();
    let kernel = config.kernel_spec(sigma)?;
    let params = serde_json::to_value(config)?;

    let mut records = Vec::new();
    for &seed in &config.seeds {
        let oracle = make_oracle();
        match restarts::optimize(&oracle, &kernel, &schedule, &opts, seed) {
            Ok(run) => {
                let mut metrics = metric(&[
                    ("best_value", run.best_value),
                    ("evaluations", run.total_evaluations as f64),
                ]);
                for (i, x) in run.best_point.iter().enumerate() {
                    metrics.insert(format!("x{i}"), *x);
                }
                let mut rec =
                    ResultRecord::ok("solve-function", seed, &name, params.clone(), metrics);
                rec.trace = Some(run.trace);
                records.push(rec);
            }
            Err(e) => records.push(ResultRecord::failed(
                "solve-function",
                seed,
                &name,
                params.clone(),
                e.to_string(),
            )),
        }
    }
    Ok(records)
}

/// Serialize records as JSON lines.
pub fn to_jsonl(records: &[ResultRecord]) -> Result<String, BenchError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<ResultRecord>, BenchError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Write once, atomically: temp file in the target directory, then rename.
pub fn write_results_atomic(path: &Path, records: &[ResultRecord]) -> Result<(), BenchError> {
    let text = to_jsonl(records)?;
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(text.as_bytes())?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate a result file into one of the figure-axis CSV tables.
pub fn emit_plot_data(records: &[ResultRecord], view: &str) -> Result<String, BenchError> {
    let ok_rows: Vec<&ResultRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    match view {
        // Fig. "error vs noise": median localization error per (noise, method).
        "error-vs-noise" => {
            let mut out = String::from("noise,method,median_error,runs\n");
            let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
            for r in &ok_rows {
                let (Some(noise), Some(err)) = (r.metrics.get("noise"), r.metrics.get("error"))
                else {
                    continue;
                };
                groups
                    .entry((format!("{noise}"), r.method.clone()))
                    .or_default()
                    .push(*err);
            }
            for ((noise, method), mut vals) in groups {
                let runs = vals.len();
                let med = median(&mut vals);
                out.push_str(&format!("{noise},{method},{med},{runs}\n"));
            }
            Ok(out)
        }
        // Fig. "cost vs budget": mean and std of normalized cost per budget.
        "cost-vs-budget" => {
            let mut out = String::from("budget,method,mean_normalized_cost,std_normalized_cost,runs\n");
            let mut groups: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
            for r in &ok_rows {
                let (Some(budget), Some(cost)) =
                    (r.metrics.get("budget"), r.metrics.get("normalized_cost"))
                else {
                    continue;
                };
                groups
                    .entry((*budget as u64, r.method.clone()))
                    .or_default()
                    .push(*cost);
            }
            for ((budget, method), vals) in groups {
                let (mean, std) = mean_std(&vals);
                out.push_str(&format!("{budget},{method},{mean},{std},{}\n", vals.len()));
            }
            Ok(out)
        }
        // Violin-style summaries for the initialization study.
        "init-summary" => {
            let mut out = String::from(
                "method,mean_final_cost,median_final_cost,mean_iterations,mean_wall_time_ms,runs\n",
            );
            let mut groups: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
            for r in &ok_rows {
                let (Some(cost), Some(iters)) =
                    (r.metrics.get("final_cost"), r.metrics.get("iterations"))
                else {
                    continue;
                };
                let wall = r.metrics.get("wall_time_ms").copied().unwrap_or(f64::NAN);
                groups
                    .entry(r.method.clone())
                    .or_default()
                    .push((*cost, *iters, wall));
            }
            for (method, rows) in groups {
                let costs: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let iters: Vec<f64> = rows.iter().map(|r| r.1).collect();
                let walls: Vec<f64> = rows.iter().map(|r| r.2).collect();
                let (mc, _) = mean_std(&costs);
                let mut costs_sorted = costs.clone();
                let med = median(&mut costs_sorted);
                let (mi, _) = mean_std(&iters);
                let (mw, _) = mean_std(&walls);
                out.push_str(&format!("{method},{mc},{med},{mi},{mw},{}\n", rows.len()));
            }
            Ok(out)
        }
        other => Err(BenchError::UnknownView(other.to_string())),
    }
}
