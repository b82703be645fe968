//! The sampled sum-of-squares SDP and its solvers.
//!
//! The primal problem is
//!     max over (c, B >= 0) of  c - lambda * Tr(B)
//!     s.t.  f(x_i) - c = Phi_i^T B Phi_i  for all i,
//! where the Phi_i are the columns of the upper-triangular Gram factor R.
//!
//! [`solve_dual_newton`] works on the Lagrange dual,
//!     min over alpha of  sum_i alpha_i f(x_i)
//!     s.t.  sum_i alpha_i = 1,  M(alpha) = lambda I + R diag(alpha) R^T >= 0,
//! with a log-det barrier and damped Newton steps on the N dual variables.
//! [`reference_dense_solve`] is an independent path-following method on the
//! full (c, B) primal, kept as a cross-check oracle for small instances.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("lambda = 0 with singular feature matrix; use lambda > 0")]
    DegenerateRegularization,
    #[error("dense reference solver limited to N <= {limit}, got {n}")]
    SizeExceeded { n: usize, limit: usize },
    #[error("dense reference solver lost positive definiteness")]
    ReferenceBreakdown,
}

/// The sampled SDP instance.
#[derive(Debug, Clone)]
pub struct SosProblem {
    /// Upper-triangular factor whose columns are the features Phi_i.
    pub features: DMatrix<f64>,
    /// Sampled objective values f(x_i).
    pub values: DVector<f64>,
    /// Trace regularization weight, >= 0.
    pub lambda: f64,
}

impl SosProblem {
    pub fn new(features: DMatrix<f64>, values: DVector<f64>, lambda: f64) -> Result<Self, SdpError> {
        let n = values.len();
        if n == 0 {
            return Err(SdpError::InvalidProblem("empty value vector".into()));
        }
        if features.nrows() != n || features.ncols() != n {
            return Err(SdpError::InvalidProblem(format!(
                "features must be {n}x{n}, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::InvalidProblem("non-finite objective value".into()));
        }
        if !(lambda >= 0.0) {
            return Err(SdpError::InvalidProblem(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(SosProblem {
            features,
            values,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Target barrier precision.
    pub epsilon: f64,
    /// Total Newton step budget, split across the epsilon schedule.
    pub max_newton_steps: usize,
    /// Tolerance on the minimum eigenvalue of M at termination.
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            epsilon: 1e-3,
            max_newton_steps: 100,
            feasibility_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub newton_steps_used: usize,
    pub final_decrement: f64,
    pub min_eig_m: f64,
    /// Dual objective recorded at the end of each barrier stage.
    pub stage_dual_objectives: Vec<f64>,
    /// Set when the barrier Hessian came close to singular.
    pub near_singular: bool,
}

/// Solution of the sampled SDP.
#[derive(Debug, Clone)]
pub struct SosCertificate {
    /// Certified lower bound, min_i (f(x_i) - Phi_i^T B Phi_i).
    pub c_lb: f64,
    /// Dual weights; sum to 1, may be negative.
    pub alpha: DVector<f64>,
    /// Primal PSD matrix in feature coordinates (epsilon * M^{-1} for the
    /// dual solver, the barrier iterate for the reference solver).
    pub b_factor: DMatrix<f64>,
    /// sum_i alpha_i f(x_i).
    pub dual_objective: f64,
    pub diagnostics: SolveDiagnostics,
}

/// M(alpha) = lambda I + R diag(alpha) R^T.
fn dual_slack(problem: &SosProblem, alpha: &DVector<f64>) -> DMatrix<f64> {
    let n = problem.n();
    let r = &problem.features;
    let mut scaled = r.clone();
    for j in 0..n {
        let a = alpha[j];
        for i in 0..n {
            scaled[(i, j)] *= a;
        }
    }
    let mut m = scaled * r.transpose();
    for i in 0..n {
        m[(i, i)] += problem.lambda;
    }
    // Symmetrize against rounding.
    let mt = m.transpose();
    (m + mt) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Geometric epsilon schedule from a spread-based start down to the target.
fn epsilon_schedule(values: &DVector<f64>, target: f64) -> Vec<f64> {
    let spread = values.max() - values.min();
    let mut eps = 0.1 * spread.max(1.0);
    if eps <= target {
        return vec![target];
    }
    let mut schedule = Vec::new();
    while eps > target {
        schedule.push(eps);
        eps /= 10.0;
    }
    schedule.push(target);
    schedule
}

/// Damped-Newton barrier method on the N dual variables.
pub fn solve_dual_newton(problem: &SosProblem, opts: &SolverOptions) -> Result<SosCertificate, SdpError> {
    if !(opts.epsilon > 0.0) {
        return Err(SdpError::InvalidProblem(format!(
            "epsilon must be > 0, got {}",
            opts.epsilon
        )));
    }
    let n = problem.n();
    let f = &problem.values;
    let r = &problem.features;

    let spread = f.max() - f.min();
    let uniform = DVector::from_element(n, 1.0 / n as f64);

    // Strict feasibility at the uniform start; for lambda = 0 this is the
    // only place M can already be singular.
    let m0 = dual_slack(problem, &uniform);
    if m0.clone().cholesky().is_none() {
        return Err(SdpError::DegenerateRegularization);
    }

    // All-equal objective values: the dual optimum is uniform.
    if spread <= 1e-12 * (1.0 + f.amax()) {
        return finalize(problem, uniform, opts.epsilon, SolveDiagnostics::default(), opts);
    }

    let schedule = epsilon_schedule(f, opts.epsilon);
    let stages = schedule.len();
    let per_stage = (opts.max_newton_steps / stages).max(1);

    let mut alpha = uniform;
    let mut diag = SolveDiagnostics::default();
    let mut prev_decrement = f64::INFINITY;
    let mut increases = 0usize;

    'stages: for &eps in &schedule {
        for _ in 0..per_stage {
            let m = dual_slack(problem, &alpha);
            let chol = match m.cholesky() {
                Some(c) => c,
                None => {
                    diag.near_singular = true;
                    break;
                }
            };
            // G = R^T M^{-1} R; gradient and Hessian of the barrier follow
            // from the rank-one constraint structure.
            let w = chol.solve(r);
            let g = r.transpose() * w;
            let grad = DVector::from_fn(n, |i, _| f[i] - eps * g[(i, i)]);
            let mut hess = DMatrix::from_fn(n, n, |i, j| {
                let gij = g[(i, j)];
                eps * gij * gij
            });
            let hchol = loop {
                match hess.clone().cholesky() {
                    Some(c) => break c,
                    None => {
                        diag.near_singular = true;
                        let ridge = 1e-12 * (1.0 + hess.diagonal().amax());
                        for i in 0..n {
                            hess[(i, i)] += ridge;
                        }
                    }
                }
            };
            // Newton step on the affine slice sum(alpha) = 1 via KKT
            // elimination of the multiplier.
            let u = hchol.solve(&grad);
            let ones = DVector::from_element(n, 1.0);
            let v = hchol.solve(&ones);
            let nu = -u.sum() / v.sum();
            let delta = -(u + v * nu);
            let decrement_sq = -grad.dot(&delta);
            if !(decrement_sq > 0.0) {
                // Gradient already in the row space of the constraint.
                diag.final_decrement = 0.0;
                break;
            }
            let decrement = decrement_sq.sqrt();
            // Newton decrement in the metric of the unscaled barrier
            // (objective / eps is standard self-concordant); damping by the
            // raw decrement is too aggressive by a factor 1/sqrt(eps).
            let normalized = decrement / eps.sqrt();
            diag.final_decrement = normalized;
            if normalized > prev_decrement {
                increases += 1;
                if increases >= 10 {
                    // Stalled iteration. Every accepted step kept M in the
                    // PD cone, so the current alpha is still dual feasible
                    // and the certificate below remains a valid bound;
                    // stop refining rather than fail.
                    diag.near_singular = true;
                    break 'stages;
                }
            } else {
                increases = 0;
            }
            prev_decrement = normalized;

            // Damped step; back off further if M leaves the PD cone.
            let mut t = 1.0 / (1.0 + normalized);
            let mut accepted = false;
            for _ in 0..40 {
                let candidate = &alpha + &delta * t;
                if dual_slack(problem, &candidate).cholesky().is_some() {
                    alpha = candidate;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            diag.newton_steps_used += 1;
            if !accepted {
                diag.near_singular = true;
                break;
            }
            // Keep the simplex constraint exact against rounding drift.
            let s = alpha.sum();
            alpha /= s;
            if normalized < 1e-6 {
                break;
            }
        }
        diag.stage_dual_objectives.push(f.dot(&alpha));
        prev_decrement = f64::INFINITY;
        increases = 0;
    }

    finalize(problem, alpha, opts.epsilon, diag, opts)
}

fn finalize(
    problem: &SosProblem,
    alpha: DVector<f64>,
    eps: f64,
    mut diag: SolveDiagnostics,
    _opts: &SolverOptions,
) -> Result<SosCertificate, SdpError> {
    let n = problem.n();
    let f = &problem.values;
    let r = &problem.features;
    // A stalled iterate can sit on the boundary of the PD cone; blending
    // toward the strictly feasible uniform point keeps sum(alpha) = 1 and
    // restores a positive definite M without invalidating the bound.
    let uniform = DVector::from_element(n, 1.0 / n as f64);
    // KKT elimination can let sum(alpha) drift by a few ulps per step on
    // ill-conditioned Grams; the bound holds for any simplex point, so
    // renormalize before certifying.
    let mut alpha = &alpha / alpha.sum();
    let mut chol = None;
    for theta in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
        let blended = &alpha * (1.0 - theta) + &uniform * theta;
        if let Some(c) = dual_slack(problem, &blended).cholesky() {
            alpha = blended;
            chol = Some(c);
            break;
        }
    }
    let chol = chol.ok_or(SdpError::DegenerateRegularization)?;
    let m = dual_slack(problem, &alpha);
    diag.min_eig_m = min_eigenvalue(&m);
    let m_inv = chol.inverse();
    let b = {
        let raw = m_inv * eps;
        let rt = raw.transpose();
        (raw + rt) * 0.5
    };
    // c_lb = min_i (f_i - Phi_i^T B Phi_i), so the lower-bound property
    // holds by construction.
    let w = chol.solve(r);
    let g = r.transpose() * w;
    let c_lb = (0..n)
        .map(|i| f[i] - eps * g[(i, i)])
        .fold(f64::INFINITY, f64::min);
    let dual_objective = f.dot(&alpha);
    Ok(SosCertificate {
        c_lb,
        alpha,
        b_factor: b,
        dual_objective,
        diagnostics: diag,
    })
}

const REFERENCE_SIZE_LIMIT: usize = 30;

/// Scaled symmetric vectorization: off-diagonal entries carry sqrt(2) so
/// that inner products of svec vectors equal Frobenius inner products.
fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    let s2 = std::f64::consts::SQRT_2;
    for i in 0..n {
        for j in i..n {
            out[k] = if i == j { m[(i, i)] } else { s2 * m[(i, j)] };
            k += 1;
        }
    }
    out
}

fn unsvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    let mut k = 0;
    let s2 = std::f64::consts::SQRT_2;
    for i in 0..n {
        for j in i..n {
            if i == j {
                out[(i, i)] = v[k];
            } else {
                out[(i, j)] = v[k] / s2;
                out[(j, i)] = v[k] / s2;
            }
            k += 1;
        }
    }
    out
}

/// Hessian of -logdet at B in svec coordinates: the operator
/// X -> B^{-1} X B^{-1}.
fn logdet_hessian_svec(b_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b_inv.nrows();
    let m = n * (n + 1) / 2;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let mut h = DMatrix::zeros(m, m);
    for a in 0..m {
        let (i, j) = pairs[a];
        let na = if i == j { 1.0 } else { 1.0 / std::f64::consts::SQRT_2 };
        for b in a..m {
            let (k, l) = pairs[b];
            let nb = if k == l { 1.0 } else { 1.0 / std::f64::consts::SQRT_2 };
            // Tr(S_a B^{-1} S_b B^{-1}) expanded over the symmetrized
            // elementary matrices.
            let mut acc = 0.0;
            let a_terms: &[(usize, usize)] = if i == j { &[(i, i)] } else { &[(i, j), (j, i)] };
            let b_terms: &[(usize, usize)] = if k == l { &[(k, k)] } else { &[(k, l), (l, k)] };
            for &(p, q) in a_terms {
                for &(r, s) in b_terms {
                    acc += b_inv[(q, r)] * b_inv[(s, p)];
                }
            }
            let val = na * nb * acc;
            h[(a, b)] = val;
            h[(b, a)] = val;
        }
    }
    h
}

/// Path-following barrier method on the full (c, B) primal. Test oracle
/// for [`solve_dual_newton`]; limited to small instances.
pub fn reference_dense_solve(problem: &SosProblem) -> Result<SosCertificate, SdpError> {
    let n = problem.n();
    if n > REFERENCE_SIZE_LIMIT {
        return Err(SdpError::SizeExceeded {
            n,
            limit: REFERENCE_SIZE_LIMIT,
        });
    }
    let f = &problem.values;
    let r = &problem.features;
    let lambda = problem.lambda;
    let m = n * (n + 1) / 2;

    // Constraint rows: svec(Phi_i Phi_i^T) for the B block, 1 for c.
    let mut a = DMatrix::zeros(n, m + 1);
    for i in 0..n {
        let phi = r.column(i).clone_owned();
        let outer = &phi * phi.transpose();
        let row = svec(&outer);
        for k in 0..m {
            a[(i, k)] = row[k];
        }
        a[(i, m)] = 1.0;
    }

    // Strictly feasible start: B0 = R^{-T} diag(f - c0) R^{-1} satisfies the
    // equality constraints exactly and is PD when f - c0 > 0.
    let spread = f.max() - f.min();
    let c0 = f.min() - spread.max(1.0);
    let rt = r.transpose();
    let mut b = {
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = f[i] - c0;
        }
        // B0 = R^{-T} D R^{-1}, computed column-wise by triangular solves.
        let x = rt
            .solve_lower_triangular(&d)
            .ok_or(SdpError::ReferenceBreakdown)?;
        let xt = x.transpose();
        let y = rt
            .solve_lower_triangular(&xt)
            .ok_or(SdpError::ReferenceBreakdown)?;
        let yt = y.transpose();
        (y + yt) * 0.5
    };
    let mu_final = 1e-6 * spread.max(1.0);
    let mut mu = spread.max(1.0);
    let mut alpha = DVector::from_element(n, 1.0 / n as f64);

    loop {
        for _ in 0..60 {
            let b_chol = b.clone().cholesky().ok_or(SdpError::ReferenceBreakdown)?;
            let b_inv = b_chol.inverse();
            // Gradient of c - lambda Tr(B) + mu logdet(B).
            let mut grad = DVector::zeros(m + 1);
            let gb = svec(&((&b_inv * mu) - DMatrix::identity(n, n) * lambda));
            for k in 0..m {
                grad[k] = gb[k];
            }
            grad[m] = 1.0;
            // Negative Hessian: mu * (B^{-1} (x) B^{-1}) on the B block,
            // zero on c.
            let hb = logdet_hessian_svec(&b_inv) * mu;
            // KKT system [[Q, A^T], [A, 0]].
            let dim = m + 1 + n;
            let mut kkt = DMatrix::zeros(dim, dim);
            for i in 0..m {
                for j in 0..m {
                    kkt[(i, j)] = hb[(i, j)];
                }
            }
            for i in 0..n {
                for j in 0..(m + 1) {
                    kkt[(m + 1 + i, j)] = a[(i, j)];
                    kkt[(j, m + 1 + i)] = a[(i, j)];
                }
            }
            let mut rhs = DVector::zeros(dim);
            for k in 0..(m + 1) {
                rhs[k] = grad[k];
            }
            // Iterates stay exactly feasible, so the primal residual is 0.
            let sol = kkt.lu().solve(&rhs).ok_or(SdpError::ReferenceBreakdown)?;
            let delta_x = sol.rows(0, m + 1).clone_owned();
            let nu = sol.rows(m + 1, n).clone_owned();
            alpha = nu;

            let decrement_sq: f64 = (0..m + 1)
                .map(|k| grad[k] * delta_x[k])
                .sum::<f64>()
                .max(0.0);
            let decrement = decrement_sq.sqrt();
            if decrement < 1e-9 {
                break;
            }
            let mut t = 1.0 / (1.0 + decrement);
            let db = unsvec(&delta_x.rows(0, m).clone_owned(), n);
            let mut stepped = false;
            for _ in 0..40 {
                let b_new = &b + &db * t;
                if b_new.clone().cholesky().is_some() {
                    b = b_new;
                    stepped = true;
                    break;
                }
                t *= 0.5;
            }
            if !stepped {
                // Numerical stall at the PD boundary; the iterate is still
                // primal feasible, so stop refining this stage.
                break;
            }
        }
        if mu <= mu_final {
            break;
        }
        mu = (mu * 0.1).max(mu_final);
    }

    // The multiplier sign convention: stationarity in c forces sum = 1.
    if alpha.sum() < 0.0 {
        alpha = -alpha;
    }
    let s = alpha.sum();
    if s.abs() > 1e-9 {
        alpha /= s;
    }

    let c_lb = (0..n)
        .map(|i| {
            let phi = r.column(i);
            f[i] - (phi.transpose() * &b * phi)[(0, 0)]
        })
        .fold(f64::INFINITY, f64::min);
    let diag = SolveDiagnostics {
        min_eig_m: min_eigenvalue(&dual_slack(problem, &alpha)),
        ..Default::default()
    };
    Ok(SosCertificate {
        c_lb,
        alpha: alpha.clone(),
        b_factor: b,
        dual_objective: f.dot(&alpha),
        diagnostics: diag,
    })
}
