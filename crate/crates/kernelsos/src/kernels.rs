//! Positive-definite kernels, Gram matrix assembly, and the jittered
//! Cholesky factorization whose columns serve as feature vectors.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Squared distances below this are treated as exactly zero so that
/// Gram matrices come out exactly symmetric with a unit diagonal.
const DIST_SQ_CLAMP: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty point list")]
    EmptyPointList,
    #[error("kernel matrix is singular even with jitter {final_jitter:e}")]
    SingularKernel { final_jitter: f64 },
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
}

/// A positive-definite kernel together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// k(x, y) = exp(-||x - y||^2 / sigma^2)
    Gaussian { scale: f64 },
    /// k(x, y) = exp(-||x - y|| / sigma)
    Laplace { scale: f64 },
    /// k(x, y) = (offset + <x, y>)^degree
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn gaussian(scale: f64) -> Result<Self, KernelError> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "gaussian scale must be positive, got {scale}"
            )));
        }
        Ok(KernelSpec::Gaussian { scale })
    }

    pub fn laplace(scale: f64) -> Result<Self, KernelError> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "laplace scale must be positive, got {scale}"
            )));
        }
        Ok(KernelSpec::Laplace { scale })
    }

    /// Offset defaults to 1 elsewhere so that the induced feature space
    /// contains constants.
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self, KernelError> {
        if degree < 1 {
            return Err(KernelError::InvalidParameter(
                "polynomial degree must be >= 1".into(),
            ));
        }
        if offset < 0.0 || !offset.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "polynomial offset must be nonnegative, got {offset}"
            )));
        }
        Ok(KernelSpec::Polynomial { degree, offset })
    }

    /// Same family with a new length scale; no-op for the polynomial
    /// family, which has no scale parameter.
    pub fn with_scale(&self, scale: f64) -> Result<Self, KernelError> {
        match self {
            KernelSpec::Gaussian { .. } => KernelSpec::gaussian(scale),
            KernelSpec::Laplace { .. } => KernelSpec::laplace(scale),
            p @ KernelSpec::Polynomial { .. } => Ok(p.clone()),
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match self {
            KernelSpec::Gaussian { scale } | KernelSpec::Laplace { scale } => Some(*scale),
            KernelSpec::Polynomial { .. } => None,
        }
    }
}

/// Evaluate k(x, y). Symmetric in its arguments by construction.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch(x.len(), y.len()));
    }
    Ok(match spec {
        KernelSpec::Gaussian { scale } => {
            let d2 = dist_sq(x, y);
            (-d2 / (scale * scale)).exp()
        }
        KernelSpec::Laplace { scale } => {
            let d = dist_sq(x, y).sqrt();
            (-d / scale).exp()
        }
        KernelSpec::Polynomial { degree, offset } => {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            (offset + dot).powi(*degree as i32)
        }
    })
}

fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        acc += d * d;
    }
    if acc < DIST_SQ_CLAMP {
        0.0
    } else {
        acc
    }
}

/// Pairwise kernel evaluations K_ij = k(x_i, x_j).
pub fn gram_matrix(spec: &KernelSpec, points: &[DVector<f64>]) -> Result<DMatrix<f64>, KernelError> {
    if points.is_empty() {
        return Err(KernelError::EmptyPointList);
    }
    let n = points.len();
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(KernelError::DimensionMismatch(dim, p.len()));
        }
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_kernel(spec, points[i].as_slice(), points[j].as_slice())?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Escalating-jitter policy for the Cholesky factorization.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    pub initial: f64,
    pub growth: f64,
    pub max_tries: usize,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial: 1e-10,
            growth: 10.0,
            max_tries: 8,
        }
    }
}

/// Upper-triangular factor R with R^T R = K + delta * I.
#[derive(Debug, Clone)]
pub struct FeatureFactorization {
    /// Upper-triangular; its columns are the feature vectors.
    pub r: DMatrix<f64>,
    pub jitter_used: f64,
    pub sample_count: usize,
}

/// Cholesky-factorize K, escalating a diagonal jitter until it succeeds.
pub fn factorize(k: &DMatrix<f64>, policy: JitterPolicy) -> Result<FeatureFactorization, KernelError> {
    assert_eq!(k.nrows(), k.ncols(), "gram matrix must be square");
    let n = k.nrows();
    let mut delta = 0.0;
    for attempt in 0..=policy.max_tries {
        let shifted = if delta == 0.0 {
            k.clone()
        } else {
            k + DMatrix::identity(n, n) * delta
        };
        if let Some(chol) = shifted.cholesky() {
            return Ok(FeatureFactorization {
                r: chol.l().transpose(),
                jitter_used: delta,
                sample_count: n,
            });
        }
        delta = if attempt == 0 {
            policy.initial
        } else {
            delta * policy.growth
        };
    }
    Err(KernelError::SingularKernel { final_jitter: delta })
}

impl FeatureFactorization {
    /// Feature map of a query point: Phi(x) = R^{-T} (k(x_i, x))_i.
    /// A query equal to sample i returns column i of R directly, which is
    /// that sample's feature by construction even when jitter was used.
    pub fn feature_map(
        &self,
        spec: &KernelSpec,
        sample_points: &[DVector<f64>],
        query: &[f64],
    ) -> Result<DVector<f64>, KernelError> {
        if let Some(i) = sample_points.iter().position(|p| p.as_slice() == query) {
            return Ok(self.r.column(i).clone_owned());
        }
        let mut kvec = DVector::zeros(self.sample_count);
        for (i, p) in sample_points.iter().enumerate() {
            kvec[i] = eval_kernel(spec, p.as_slice(), query)?;
        }
        // R^T is lower-triangular; forward substitution.
        let rt = self.r.transpose();
        let phi = rt
            .solve_lower_triangular(&kvec)
            .ok_or(KernelError::SingularKernel {
                final_jitter: self.jitter_used,
            })?;
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vecs(points: &[Vec<f64>]) -> Vec<DVector<f64>> {
        points.iter().map(|p| DVector::from_vec(p.clone())).collect()
    }

    #[test]
    fn gaussian_zero_distance_is_one() {
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let x = [0.3, -1.2];
        assert_eq!(eval_kernel(&spec, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_direct_formula() {
        let spec = KernelSpec::gaussian(2.0).unwrap();
        // ||x - y|| = 2 -> exp(-4/4) = e^-1
        let v = eval_kernel(&spec, &[0.0], &[2.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn laplace_direct_formula() {
        let spec = KernelSpec::laplace(0.5).unwrap();
        let v = eval_kernel(&spec, &[0.0], &[1.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn polynomial_direct_formula() {
        let spec = KernelSpec::polynomial(2, 1.0).unwrap();
        let v = eval_kernel(&spec, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(matches!(
            eval_kernel(&spec, &[1.0], &[1.0, 2.0]),
            Err(KernelError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn gram_duplicate_point() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let pts = vecs(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let k = gram_matrix(&spec, &pts).unwrap();
        for v in k.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn gram_direct_formula() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let pts = vecs(&[vec![0.0], vec![1.0]]);
        let k = gram_matrix(&spec, &pts).unwrap();
        let e1 = (-1.0f64).exp();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!((k[(0, 1)] - e1).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn gram_empty_rejected() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(matches!(
            gram_matrix(&spec, &[]),
            Err(KernelError::EmptyPointList)
        ));
    }

    #[test]
    fn laplace_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<DVector<f64>> = (0..10)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let spec = KernelSpec::laplace(1.0).unwrap();
        let k = gram_matrix(&spec, &pts).unwrap();
        let eig = k.symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-10, "min eigenvalue {min_eig}");
    }

    #[test]
    fn factorize_identity() {
        let k = DMatrix::identity(2, 2);
        let f = factorize(&k, JitterPolicy::default()).unwrap();
        assert_eq!(f.jitter_used, 0.0);
        assert!((f.r.clone() - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn factorize_rank_deficient_uses_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let policy = JitterPolicy::default();
        let f = factorize(&k, policy).unwrap();
        assert_eq!(f.jitter_used, policy.initial);
        let rec = f.r.transpose() * &f.r;
        let target = &k + DMatrix::identity(2, 2) * f.jitter_used;
        assert!((rec - target).amax() < 1e-12);
    }

    #[test]
    fn factorize_reconstruction_random_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<DVector<f64>> = (0..36)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let spec = KernelSpec::gaussian(1.4).unwrap();
        let k = gram_matrix(&spec, &pts).unwrap();
        let f = factorize(&k, JitterPolicy::default()).unwrap();
        let rec = f.r.transpose() * &f.r - &k - DMatrix::identity(36, 36) * f.jitter_used;
        assert!(rec.amax() < 1e-8, "reconstruction error {}", rec.amax());
    }

    #[test]
    fn factorize_idempotence_within_one_rung() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let policy = JitterPolicy::default();
        let f = factorize(&k, policy).unwrap();
        let k2 = f.r.transpose() * &f.r - DMatrix::identity(2, 2) * f.jitter_used;
        let f2 = factorize(&k2, policy).unwrap();
        assert!(f2.jitter_used <= f.jitter_used * policy.growth);
    }

    #[test]
    fn factorize_fails_on_hopeless_matrix() {
        let k = DMatrix::from_row_slice(2, 2, &[-1e6, 0.0, 0.0, -1e6]);
        match factorize(&k, JitterPolicy::default()) {
            Err(KernelError::SingularKernel { final_jitter }) => {
                assert!(final_jitter > 0.0);
            }
            other => panic!("expected singular-kernel error, got {other:?}"),
        }
    }

    #[test]
    fn polynomial_kernel_matches_expansion_1d() {
        for d in 1..=4u32 {
            let spec = KernelSpec::polynomial(d, 1.0).unwrap();
            for &(x, y) in &[(0.3, -0.7), (1.5, 2.0), (-1.0, -1.0)] {
                let v = eval_kernel(&spec, &[x], &[y]).unwrap();
                let direct = (1.0 + x * y).powi(d as i32);
                assert!((v - direct).abs() < 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_symmetry(
            xs in proptest::collection::vec(-10.0f64..10.0, 3),
            ys in proptest::collection::vec(-10.0f64..10.0, 3),
            scale in 0.1f64..5.0,
        ) {
            for spec in [
                KernelSpec::gaussian(scale).unwrap(),
                KernelSpec::laplace(scale).unwrap(),
                KernelSpec::polynomial(3, 1.0).unwrap(),
            ] {
                let a = eval_kernel(&spec, &xs, &ys).unwrap();
                let b = eval_kernel(&spec, &ys, &xs).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn gram_diagonal_is_one(
            pts in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 2), 1..8),
            scale in 0.1f64..5.0,
        ) {
            let points: Vec<DVector<f64>> =
                pts.iter().map(|p| DVector::from_vec(p.clone())).collect();
            for spec in [
                KernelSpec::gaussian(scale).unwrap(),
                KernelSpec::laplace(scale).unwrap(),
            ] {
                let k = gram_matrix(&spec, &points).unwrap();
                for i in 0..points.len() {
                    prop_assert_eq!(k[(i, i)], 1.0);
                }
            }
        }
    }
}
