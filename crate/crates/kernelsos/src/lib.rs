//! KernelSOS: sample-based kernel sum-of-squares global optimization.
//!
//! One step of the method samples a hypercube, assembles the Gram matrix
//! of a chosen kernel over the samples, and solves a single semidefinite
//! program that simultaneously fits a lower-bounding surrogate and
//! certifies its minimum. A shrinking-hypercube restart loop turns the
//! step into a global optimizer. The crate ships two benchmark problem
//! families (range-only localization and pendulum swing-up trajectory
//! optimization), baseline methods, and a reproducible experiment
//! harness behind the `kernelsos` binary.

pub mod bench;
pub mod kernels;
pub mod problems;
pub mod restarts;
pub mod sdp;
pub mod step;
pub mod trajopt;

pub use kernels::{eval_kernel, factorize, gram_matrix, FeatureFactorization, JitterPolicy, KernelSpec};
pub use restarts::{optimize, RestartSchedule, RunResult};
pub use sdp::{reference_dense_solve, solve_dual_newton, SosCertificate, SosProblem, SolverOptions};
pub use step::{ksos_step, sample_uniform, surrogate_eval, BoxDomain, ObjectiveOracle, StepResult};
