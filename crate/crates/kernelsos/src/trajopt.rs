//! Pendulum rollout simulator, the single-shooting trajectory cost, and a
//! finite-difference shooting refiner.
//!
//! Angles are measured from the upright position and kept unwrapped, so
//! the goal state is the origin. Dynamics use point masses on rigid
//! massless rods, integrated with semi-implicit Euler.

use crate::step::ObjectiveOracle;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("rollout diverged at step {step}")]
    Diverged { step: usize },
    #[error("control sequence length {got} does not match horizon * links = {expected}")]
    BadControlLength { got: usize, expected: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct PendulumParams {
    pub links: usize,
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub gravity: f64,
    pub damping: Vec<f64>,
    pub dt: f64,
    pub horizon: usize,
    pub torque_limit: Option<f64>,
}

impl PendulumParams {
    pub fn single(dt: f64, horizon: usize, torque_limit: Option<f64>) -> Self {
        PendulumParams {
            links: 1,
            masses: vec![1.0],
            lengths: vec![1.0],
            gravity: 9.81,
            damping: vec![0.1],
            dt,
            horizon,
            torque_limit,
        }
    }

    pub fn double(dt: f64, horizon: usize, torque_limit: Option<f64>) -> Self {
        PendulumParams {
            links: 2,
            masses: vec![1.0, 1.0],
            lengths: vec![1.0, 1.0],
            gravity: 9.81,
            damping: vec![0.1, 0.1],
            dt,
            horizon,
            torque_limit,
        }
    }

    fn validate(&self) {
        assert!(self.links == 1 || self.links == 2, "1 or 2 links supported");
        assert!(self.dt > 0.0 && self.horizon >= 1);
        assert_eq!(self.masses.len(), self.links);
        assert_eq!(self.lengths.len(), self.links);
        assert_eq!(self.damping.len(), self.links);
        assert!(self.masses.iter().all(|&m| m > 0.0));
        assert!(self.lengths.iter().all(|&l| l > 0.0));
    }
}

/// Flat torque sequence, one entry per (time step, joint).
pub type ControlSequence = Vec<f64>;

#[derive(Debug, Clone)]
pub struct RolloutProblem {
    pub params: PendulumParams,
    /// (angles, angular velocities), dimension 2 * links.
    pub start_state: Vec<f64>,
    pub control_cost_weight: f64,
}

impl RolloutProblem {
    pub fn new(params: PendulumParams, start_state: Vec<f64>, control_cost_weight: f64) -> Self {
        params.validate();
        assert_eq!(start_state.len(), 2 * params.links);
        assert!(control_cost_weight >= 0.0);
        RolloutProblem {
            params,
            start_state,
            control_cost_weight,
        }
    }

    /// Swing-up task: start hanging at rest.
    pub fn swing_up(params: PendulumParams, control_cost_weight: f64) -> Self {
        let links = params.links;
        let mut start = vec![0.0; 2 * links];
        start[0] = std::f64::consts::PI;
        RolloutProblem::new(params, start, control_cost_weight)
    }

    pub fn control_dim(&self) -> usize {
        self.params.horizon * self.params.links
    }
}

/// Joint accelerations for the current state and (already clamped)
/// torques.
fn accelerations(params: &PendulumParams, q: &[f64], qd: &[f64], tau: &[f64]) -> Vec<f64> {
    let g = params.gravity;
    match params.links {
        1 => {
            let m = params.masses[0];
            let l = params.lengths[0];
            // m l^2 qdd = m g l sin(q) - b qd + tau, with q from upright.
            let qdd = (m * g * l * q[0].sin() - params.damping[0] * qd[0] + tau[0]) / (m * l * l);
            vec![qdd]
        }
        _ => {
            let (m1, m2) = (params.masses[0], params.masses[1]);
            let (l1, l2) = (params.lengths[0], params.lengths[1]);
            let (q1, q2) = (q[0], q[1]);
            let (qd1, qd2) = (qd[0], qd[1]);
            let c2 = q2.cos();
            let s2 = q2.sin();
            // Manipulator form M qdd + C + grad U = tau - b qd, with point
            // masses at the link ends and angles from upright.
            let m11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
            let m12 = m2 * (l2 * l2 + l1 * l2 * c2);
            let m22 = m2 * l2 * l2;
            let c1 = -m2 * l1 * l2 * s2 * (2.0 * qd1 * qd2 + qd2 * qd2);
            let c2v = m2 * l1 * l2 * s2 * qd1 * qd1;
            let g1 = -(m1 + m2) * g * l1 * q1.sin() - m2 * g * l2 * (q1 + q2).sin();
            let g2 = -m2 * g * l2 * (q1 + q2).sin();
            let rhs1 = tau[0] - params.damping[0] * qd1 - c1 - g1;
            let rhs2 = tau[1] - params.damping[1] * qd2 - c2v - g2;
            let det = m11 * m22 - m12 * m12;
            vec![(m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det]
        }
    }
}

fn clamp_torques(params: &PendulumParams, u: &[f64]) -> Vec<f64> {
    match params.torque_limit {
        Some(limit) => u.iter().map(|&t| t.clamp(-limit, limit)).collect(),
        None => u.to_vec(),
    }
}

/// Simulate the pendulum over the horizon; returns states x_1 .. x_{T+1}.
pub fn rollout(problem: &RolloutProblem, u: &ControlSequence) -> Result<Vec<Vec<f64>>, RolloutError> {
    let params = &problem.params;
    let links = params.links;
    let expected = problem.control_dim();
    if u.len() != expected {
        return Err(RolloutError::BadControlLength {
            got: u.len(),
            expected,
        });
    }
    let mut states = Vec::with_capacity(params.horizon + 1);
    let mut q: Vec<f64> = problem.start_state[..links].to_vec();
    let mut qd: Vec<f64> = problem.start_state[links..].to_vec();
    states.push(problem.start_state.clone());
    for t in 0..params.horizon {
        let tau = clamp_torques(params, &u[t * links..(t + 1) * links]);
        let qdd = accelerations(params, &q, &qd, &tau);
        for j in 0..links {
            qd[j] += params.dt * qdd[j];
            q[j] += params.dt * qd[j];
        }
        if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
            return Err(RolloutError::Diverged { step: t });
        }
        let mut state = q.clone();
        state.extend_from_slice(&qd);
        states.push(state);
    }
    Ok(states)
}

/// Terminal-state squared norm plus weighted control effort.
pub fn to_cost(problem: &RolloutProblem, u: &ControlSequence) -> Result<f64, RolloutError> {
    let states = rollout(problem, u)?;
    let terminal = states.last().expect("rollout returns at least one state");
    let terminal_cost: f64 = terminal.iter().map(|v| v * v).sum();
    let effort: f64 = u.iter().map(|v| v * v).sum();
    Ok(terminal_cost + problem.control_cost_weight * effort)
}

/// Black-box view of the shooting cost; each evaluation is one rollout.
/// Diverged rollouts surface as +infinity.
pub fn as_oracle(problem: &RolloutProblem) -> ObjectiveOracle {
    let problem = Arc::new(problem.clone());
    let dim = problem.control_dim();
    ObjectiveOracle::new(dim, true, move |u: &[f64]| {
        to_cost(&problem, &u.to_vec()).unwrap_or(f64::INFINITY)
    })
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub controls: ControlSequence,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent on the shooting cost with central finite differences
/// and Armijo backtracking.
pub fn shooting_refine(
    problem: &RolloutProblem,
    u0: &ControlSequence,
    max_iters: usize,
    tolerance: f64,
) -> Result<ShootingResult, RolloutError> {
    let dim = problem.control_dim();
    if u0.len() != dim {
        return Err(RolloutError::BadControlLength {
            got: u0.len(),
            expected: dim,
        });
    }
    let project = |u: &mut ControlSequence| {
        if let Some(limit) = problem.params.torque_limit {
            for v in u.iter_mut() {
                *v = v.clamp(-limit, limit);
            }
        }
    };
    let mut u = u0.clone();
    project(&mut u);
    let mut cost = to_cost(problem, &u)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        // Central differences, step scaled per coordinate.
        let mut grad = vec![0.0; dim];
        let mut grad_inf = 0.0f64;
        for i in 0..dim {
            let h = 1e-5 * (1.0 + u[i].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            let fp = to_cost(problem, &up).unwrap_or(f64::INFINITY);
            let fm = to_cost(problem, &dn).unwrap_or(f64::INFINITY);
            if !fp.is_finite() || !fm.is_finite() {
                grad[i] = 0.0;
                continue;
            }
            grad[i] = (fp - fm) / (2.0 * h);
            grad_inf = grad_inf.max(grad[i].abs());
        }
        if grad_inf < tolerance {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut step = 1.0 / (1.0 + grad_inf);
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = u.iter().zip(&grad).map(|(ui, gi)| ui - step * gi).collect();
            project(&mut trial);
            match to_cost(problem, &trial) {
                Ok(trial_cost) if trial_cost.is_finite() => {
                    if trial_cost <= cost - 1e-4 * step * grad_sq {
                        u = trial;
                        cost = trial_cost;
                        accepted = true;
                        break;
                    }
                }
                _ => {}
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Line search stalled; report incumbent.
            break;
        }
    }

    Ok(ShootingResult {
        controls: u,
        cost,
        iterations,
        converged,
    })
}

/// Per-step CSV (time, state, control) for plotting.
pub fn export_trajectory(
    problem: &RolloutProblem,
    u: &ControlSequence,
    out: &mut dyn Write,
) -> Result<(), RolloutError> {
    let states = rollout(problem, u)?;
    let links = problem.params.links;
    let mut header = String::from("time");
    for j in 0..links {
        header.push_str(&format!(",q{j}"));
    }
    for j in 0..links {
        header.push_str(&format!(",qd{j}"));
    }
    for j in 0..links {
        header.push_str(&format!(",u{j}"));
    }
    writeln!(out, "{header}")?;
    for (t, state) in states.iter().enumerate() {
        let time = t as f64 * problem.params.dt;
        let mut row = format!("{time}");
        for v in state {
            row.push_str(&format!(",{v}"));
        }
        for j in 0..links {
            let torque = if t < problem.params.horizon {
                u[t * links + j]
            } else {
                0.0
            };
            row.push_str(&format!(",{torque}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
