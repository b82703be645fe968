//! One fit-and-minimize step: sample a hypercube, solve the sampled SDP,
//! extract the weighted-sample minimizer candidate, and expose the
//! surrogate lower-bound function.

use crate::kernels::{self, FeatureFactorization, JitterPolicy, KernelError, KernelSpec};
use crate::sdp::{self, SdpError, SosCertificate, SosProblem, SolverOptions};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("oracle dimension {oracle} does not match domain dimension {domain}")]
    DimensionMismatch { oracle: usize, domain: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("SDP solve failed: {source}")]
    Solver {
        source: SdpError,
        /// Sample set attached for diagnosis.
        samples: Vec<(Vec<f64>, f64)>,
    },
    #[error("oracle returned a non-finite value at {point:?}")]
    NonFiniteValue { point: Vec<f64> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Hypercube B(z, r) in the max norm: half-width r per axis.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BoxDomain {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BoxDomain {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "radius must be positive");
        assert!(!center.is_empty(), "domain must have dimension >= 1");
        BoxDomain { center, radius }
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(xi, ci)| (xi - ci).abs() <= self.radius + 1e-12)
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .map(|(xi, ci)| xi.clamp(ci - self.radius, ci + self.radius))
            .collect()
    }
}

/// Evaluation-only view of a cost function.
pub struct ObjectiveOracle {
    eval: Box<dyn Fn(&[f64]) -> f64 + Sync>,
    dimension: usize,
    reentrant: bool,
    counter: AtomicU64,
}

impl ObjectiveOracle {
    pub fn new(dimension: usize, reentrant: bool, eval: impl Fn(&[f64]) -> f64 + Sync + 'static) -> Self {
        ObjectiveOracle {
            eval: Box::new(eval),
            dimension,
            reentrant,
            counter: AtomicU64::new(0),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn reentrant(&self) -> bool {
        self.reentrant
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        self.counter.fetch_add(1, Ordering::Relaxed);
        (self.eval)(x)
    }

    pub fn evaluation_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Uniform i.i.d. samples from the hypercube; a fixed seed gives a fixed
/// point list.
pub fn sample_uniform(domain: &BoxDomain, count: usize, seed: u64) -> Vec<DVector<f64>> {
    assert!(count >= 1, "need at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = domain.dimension();
    (0..count)
        .map(|_| {
            DVector::from_fn(dim, |i, _| {
                let c = domain.center[i];
                let r = domain.radius;
                rng.gen_range(c - r..=c + r)
            })
        })
        .collect()
}

/// Result of one KernelSOS step.
pub struct StepResult {
    pub certificate: SosCertificate,
    pub sample_points: Vec<DVector<f64>>,
    pub sample_values: Vec<f64>,
    pub minimizer_candidate: Vec<f64>,
    /// Lowest observed sample and its value.
    pub best_sample: (Vec<f64>, f64),
    /// f evaluated at the candidate (post-hoc, counted against the budget).
    pub candidate_value: f64,
    pub factorization: FeatureFactorization,
    pub kernel: KernelSpec,
}

impl StepResult {
    /// The better of the extracted candidate and the best raw sample.
    pub fn chosen(&self) -> (&[f64], f64) {
        if self.candidate_value <= self.best_sample.1 {
            (&self.minimizer_candidate, self.candidate_value)
        } else {
            (&self.best_sample.0, self.best_sample.1)
        }
    }
}

/// One KernelSOS step: N oracle evaluations for the SDP plus one for the
/// extracted candidate.
pub fn ksos_step(
    oracle: &ObjectiveOracle,
    domain: &BoxDomain,
    kernel: &KernelSpec,
    lambda: f64,
    n: usize,
    opts: &SolverOptions,
    seed: u64,
) -> Result<StepResult, StepError> {
    let points = sample_uniform(domain, n, seed);
    ksos_step_with_samples(oracle, domain, kernel, lambda, points, opts)
}

/// Same as [`ksos_step`] but with a caller-provided sample set (grids,
/// reproducibility studies).
pub fn ksos_step_with_samples(
    oracle: &ObjectiveOracle,
    domain: &BoxDomain,
    kernel: &KernelSpec,
    lambda: f64,
    points: Vec<DVector<f64>>,
    opts: &SolverOptions,
) -> Result<StepResult, StepError> {
    if oracle.dimension() != domain.dimension() {
        return Err(StepError::DimensionMismatch {
            oracle: oracle.dimension(),
            domain: domain.dimension(),
        });
    }
    let n = points.len();
    if n < 2 {
        return Err(StepError::TooFewSamples(n));
    }

    let mut values = Vec::with_capacity(n);
    for p in &points {
        let v = oracle.evaluate(p.as_slice());
        if !v.is_finite() {
            return Err(StepError::NonFiniteValue {
                point: p.as_slice().to_vec(),
            });
        }
        values.push(v);
    }

    let gram = kernels::gram_matrix(kernel, &points)?;
    let fact = kernels::factorize(&gram, JitterPolicy::default())?;
    let problem = SosProblem::new(fact.r.clone(), DVector::from_vec(values.clone()), lambda)
        .map_err(|source| StepError::Solver {
            source,
            samples: attach(&points, &values),
        })?;
    let certificate = sdp::solve_dual_newton(&problem, opts).map_err(|source| StepError::Solver {
        source,
        samples: attach(&points, &values),
    })?;

    // Weighted-sample candidate, clipped back into the step domain since
    // the dual weights may be negative.
    let dim = domain.dimension();
    let mut candidate = vec![0.0; dim];
    for (i, p) in points.iter().enumerate() {
        let a = certificate.alpha[i];
        for d in 0..dim {
            candidate[d] += a * p[d];
        }
    }
    let candidate = domain.clip(&candidate);
    let candidate_value = oracle.evaluate(&candidate);

    let (best_idx, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty sample set");
    let best_sample = (points[best_idx].as_slice().to_vec(), values[best_idx]);

    Ok(StepResult {
        certificate,
        sample_points: points,
        sample_values: values,
        minimizer_candidate: candidate,
        best_sample,
        candidate_value,
        factorization: fact,
        kernel: kernel.clone(),
    })
}

fn attach(points: &[DVector<f64>], values: &[f64]) -> Vec<(Vec<f64>, f64)> {
    points
        .iter()
        .zip(values)
        .map(|(p, &v)| (p.as_slice().to_vec(), v))
        .collect()
}

/// Surrogate lower-bound model: f~(x) = c_lb + Phi(x)^T B Phi(x).
pub fn surrogate_eval(result: &StepResult, query: &[f64]) -> Result<f64, StepError> {
    let phi = result
        .factorization
        .feature_map(&result.kernel, &result.sample_points, query)?;
    let quad = (phi.transpose() * &result.certificate.b_factor * &phi)[(0, 0)];
    Ok(result.certificate.c_lb + quad)
}

/// Evaluate the surrogate on a regular grid over a box and emit a CSV
/// table (one coordinate column per axis plus the surrogate value).
pub fn export_surrogate_grid(
    result: &StepResult,
    domain: &BoxDomain,
    resolution: usize,
    out: &mut dyn Write,
) -> Result<(), StepError> {
    assert!(resolution >= 2);
    let dim = domain.dimension();
    assert!(dim <= 2, "grid export supports 1D and 2D domains");
    let axis = |d: usize, i: usize| {
        domain.center[d] - domain.radius
            + 2.0 * domain.radius * (i as f64) / ((resolution - 1) as f64)
    };
    match dim {
        1 => {
            writeln!(out, "x,surrogate")?;
            for i in 0..resolution {
                let x = axis(0, i);
                let v = surrogate_eval(result, &[x])?;
                writeln!(out, "{x},{v}")?;
            }
        }
        _ => {
            writeln!(out, "x,y,surrogate")?;
            for i in 0..resolution {
                for j in 0..resolution {
                    let x = axis(0, i);
                    let y = axis(1, j);
                    let v = surrogate_eval(result, &[x, y])?;
                    writeln!(out, "{x},{y},{v}")?;
                }
            }
        }
    }
    Ok(())
}
