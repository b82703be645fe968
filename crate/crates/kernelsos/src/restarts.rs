//! Shrinking-hypercube multi-restart driver with geometric kernel-scale
//! decay.

use crate::kernels::KernelSpec;
use crate::sdp::SolverOptions;
use crate::step::{ksos_step, BoxDomain, ObjectiveOracle, StepError, StepResult};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: usize,
        source: StepError,
        /// Completed stages up to the failure.
        partial_trace: Vec<StageRecord>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Geometric shrink schedule: stage i runs on radius gamma^i * r0 with
/// kernel scale gamma^i * sigma0.
#[derive(Debug, Clone)]
pub struct RestartSchedule {
    pub initial_center: Vec<f64>,
    pub initial_radius: f64,
    /// Number of restarts; the run has w + 1 stages.
    pub restarts: usize,
    pub decay: f64,
    pub samples_per_restart: usize,
    pub initial_kernel_scale: f64,
    pub lambda: f64,
    /// Optional hard search region: every stage box is translated to fit
    /// entirely inside it (stages larger than the region are centered).
    pub hard_domain: Option<BoxDomain>,
}

impl RestartSchedule {
    fn validate(&self) -> Result<(), RunError> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(RunError::InvalidSchedule(format!(
                "decay must be in (0, 1), got {}",
                self.decay
            )));
        }
        if !(self.initial_radius > 0.0) {
            return Err(RunError::InvalidSchedule("initial radius must be positive".into()));
        }
        if self.samples_per_restart < 2 {
            return Err(RunError::InvalidSchedule("need at least 2 samples per restart".into()));
        }
        if !(self.initial_kernel_scale > 0.0) {
            return Err(RunError::InvalidSchedule("kernel scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-stage record kept for the run trace.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub kernel_scale: f64,
    pub c_lb: f64,
    pub candidate: Vec<f64>,
    pub candidate_value: f64,
    pub best_sample: Vec<f64>,
    pub best_sample_value: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<StageRecord>,
    pub total_evaluations: u64,
}

fn record_stage(stage: usize, domain: &BoxDomain, scale: f64, result: &StepResult) -> StageRecord {
    StageRecord {
        stage,
        center: domain.center.clone(),
        radius: domain.radius,
        kernel_scale: scale,
        c_lb: result.certificate.c_lb,
        candidate: result.minimizer_candidate.clone(),
        candidate_value: result.candidate_value,
        best_sample: result.best_sample.0.clone(),
        best_sample_value: result.best_sample.1,
        newton_steps: result.certificate.diagnostics.newton_steps_used,
    }
}

/// Run the full restart loop. Stage i+1 recenters on the better of the
/// previous stage's candidate and best sample; earlier samples are
/// discarded for the SDP but tracked for the incumbent.
pub fn optimize(
    oracle: &ObjectiveOracle,
    kernel: &KernelSpec,
    schedule: &RestartSchedule,
    opts: &SolverOptions,
    seed: u64,
) -> Result<RunResult, RunError> {
    schedule.validate()?;
    let start_evals = oracle.evaluation_count();
    let mut trace = Vec::with_capacity(schedule.restarts + 1);
    let mut center = schedule.initial_center.clone();
    let mut incumbent: Option<(Vec<f64>, f64)> = None;

    for stage in 0..=schedule.restarts {
        let shrink = schedule.decay.powi(stage as i32);
        let radius = schedule.initial_radius * shrink;
        let scale = schedule.initial_kernel_scale * shrink;
        if let Some(hard) = &schedule.hard_domain {
            center = fit_center(hard, &center, radius);
        }
        let domain = BoxDomain::new(center.clone(), radius);
        let stage_kernel = kernel
            .with_scale(scale)
            .map_err(|e| RunError::InvalidSchedule(e.to_string()))?;
        // Distinct per-stage sample streams from one base seed.
        let stage_seed = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(stage as u64);
        let result = ksos_step(
            oracle,
            &domain,
            &stage_kernel,
            schedule.lambda,
            schedule.samples_per_restart,
            opts,
            stage_seed,
        )
        .map_err(|source| RunError::StageFailed {
            stage,
            source,
            partial_trace: trace.clone(),
        })?;

        for (p, &v) in result.sample_points.iter().zip(&result.sample_values) {
            if incumbent.as_ref().map_or(true, |(_, best)| v < *best) {
                incumbent = Some((p.as_slice().to_vec(), v));
            }
        }
        if incumbent
            .as_ref()
            .map_or(true, |(_, best)| result.candidate_value < *best)
        {
            incumbent = Some((result.minimizer_candidate.clone(), result.candidate_value));
        }

        trace.push(record_stage(stage, &domain, scale, &result));

        let (next, _) = result.chosen();
        center = next.to_vec();
    }

    let (best_point, best_value) = incumbent.expect("at least one stage ran");
    Ok(RunResult {
        best_point,
        best_value,
        trace,
        total_evaluations: oracle.evaluation_count() - start_evals,
    })
}

/// Translate a stage center so the stage box lies inside the hard region;
/// a stage wider than the region collapses to the region's center.
fn fit_center(hard: &BoxDomain, center: &[f64], radius: f64) -> Vec<f64> {
    let slack = (hard.radius - radius).max(0.0);
    center
        .iter()
        .zip(&hard.center)
        .map(|(ci, hi)| ci.clamp(hi - slack, hi + slack))
        .collect()
}

/// Emit the stage trace as JSON lines, one record per stage.
pub fn export_trace(trace: &[StageRecord], out: &mut dyn Write) -> Result<(), RunError> {
    for record in trace {
        let line = serde_json::to_string(record).expect("stage record serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}
