//! Range-only localization benchmark, a derivative-free local refiner,
//! the best-sample baseline, and small analytic test functions.

use crate::step::{sample_uniform, BoxDomain, ObjectiveOracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Noise variance floor so that a noiseless configuration stays finite.
const WEIGHT_FLOOR: f64 = 1e-6;

/// A 2D range-only localization instance: anchors, noisy distance
/// measurements, per-measurement weights, and the ground truth kept for
/// scoring only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeOnlyInstance {
    pub anchors: Vec<[f64; 2]>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    pub ground_truth: [f64; 2],
    pub seed: u64,
}

/// Anchors uniform in a box rescaled to exactly 2x2 ([-1, 1]^2), target
/// uniform in the same box, Gaussian noise on the distances clamped at 0.
pub fn generate_ro_instance(seed: u64, anchor_count: usize, noise_std: f64) -> RangeOnlyInstance {
    assert!(anchor_count >= 3, "need at least 3 anchors in 2D");
    assert!(noise_std >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<[f64; 2]> = (0..anchor_count)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    // Rescale each axis so the anchor bounding box is exactly [-1, 1]^2.
    let mut anchors = raw.clone();
    for axis in 0..2 {
        let min = raw.iter().map(|a| a[axis]).fold(f64::INFINITY, f64::min);
        let max = raw.iter().map(|a| a[axis]).fold(f64::NEG_INFINITY, f64::max);
        let span = (max - min).max(1e-9);
        for a in &mut anchors {
            a[axis] = -1.0 + 2.0 * (a[axis] - min) / span;
        }
    }
    let ground_truth = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let distances: Vec<f64> = anchors
        .iter()
        .map(|a| {
            let d = ((ground_truth[0] - a[0]).powi(2) + (ground_truth[1] - a[1]).powi(2)).sqrt();
            let noisy = if noise_std > 0.0 { d + noise.sample(&mut rng) } else { d };
            noisy.max(0.0)
        })
        .collect();
    let weights = vec![(noise_std * noise_std).max(WEIGHT_FLOOR); anchor_count];
    RangeOnlyInstance {
        anchors,
        distances,
        weights,
        ground_truth,
        seed,
    }
}

/// Weighted squared residuals on raw distances.
pub fn ro_cost_nonsq(instance: &RangeOnlyInstance, x: &[f64]) -> f64 {
    assert_eq!(x.len(), 2);
    instance
        .anchors
        .iter()
        .zip(&instance.distances)
        .zip(&instance.weights)
        .map(|((a, &d), &w)| {
            let dist = ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2)).sqrt();
            (d - dist).powi(2) / w
        })
        .sum()
}

/// Weighted squared residuals on squared distances (quartic cost).
pub fn ro_cost_sq(instance: &RangeOnlyInstance, x: &[f64]) -> f64 {
    assert_eq!(x.len(), 2);
    instance
        .anchors
        .iter()
        .zip(&instance.distances)
        .zip(&instance.weights)
        .map(|((a, &d), &w)| {
            let dist_sq = (x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2);
            (d * d - dist_sq).powi(2) / w
        })
        .sum()
}

pub fn ro_oracle_nonsq(instance: &RangeOnlyInstance) -> ObjectiveOracle {
    let inst = Arc::new(instance.clone());
    ObjectiveOracle::new(2, true, move |x| ro_cost_nonsq(&inst, x))
}

pub fn ro_oracle_sq(instance: &RangeOnlyInstance) -> ObjectiveOracle {
    let inst = Arc::new(instance.clone());
    ObjectiveOracle::new(2, true, move |x| ro_cost_sq(&inst, x))
}

/// Outcome of the pattern-search refiner.
#[derive(Debug, Clone)]
pub struct RefineResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

const REFINE_ITERATION_CAP: usize = 10_000;

/// Derivative-free compass search with a shrinking step. Stops when the
/// step falls below `tolerance` or the iteration cap is hit.
pub fn local_refine(oracle: &ObjectiveOracle, start: &[f64], tolerance: f64) -> RefineResult {
    let dim = oracle.dimension();
    assert_eq!(start.len(), dim);
    let mut x = start.to_vec();
    let mut fx = oracle.evaluate(&x);
    let mut step = 0.25;
    let mut iterations = 0;
    while step >= tolerance && iterations < REFINE_ITERATION_CAP {
        let mut improved = false;
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[d] += sign * step;
                let ft = oracle.evaluate(&trial);
                iterations += 1;
                if ft < fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
                if iterations >= REFINE_ITERATION_CAP {
                    break;
                }
            }
            if iterations >= REFINE_ITERATION_CAP {
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    RefineResult {
        point: x,
        value: fx,
        converged: step < tolerance,
        iterations,
    }
}

/// Sampling mode for the best-sample baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Uniform,
    Grid,
}

/// Evaluate N samples over the domain and return the argmin. Grid mode
/// uses ceil(N^(1/dim)) points per axis.
pub fn best_sample_baseline(
    oracle: &ObjectiveOracle,
    domain: &BoxDomain,
    n: usize,
    seed: u64,
    mode: SamplingMode,
) -> (Vec<f64>, f64) {
    assert!(n >= 1);
    let points = match mode {
        SamplingMode::Uniform => sample_uniform(domain, n, seed),
        SamplingMode::Grid => grid_points(domain, n),
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for p in points {
        let v = oracle.evaluate(p.as_slice());
        if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((p.as_slice().to_vec(), v));
        }
    }
    best.expect("at least one sample")
}

fn grid_points(domain: &BoxDomain, n: usize) -> Vec<nalgebra::DVector<f64>> {
    let dim = domain.dimension();
    let per_axis = (n as f64).powf(1.0 / dim as f64).ceil() as usize;
    let per_axis = per_axis.max(1);
    let axis_values: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let c = domain.center[d];
            let r = domain.radius;
            if per_axis == 1 {
                vec![c]
            } else {
                (0..per_axis)
                    .map(|i| c - r + 2.0 * r * i as f64 / (per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = Vec::new();
    let total = per_axis.pow(dim as u32);
    for mut idx in 0..total {
        let mut p = Vec::with_capacity(dim);
        for d in 0..dim {
            p.push(axis_values[d][idx % per_axis]);
            idx /= per_axis;
        }
        out.push(nalgebra::DVector::from_vec(p));
    }
    out
}

/// 1D benchmark with a shallow local basin at -0.5 and the global
/// minimum at 0.6.
pub fn two_basin(x: &[f64]) -> f64 {
    let a = (x[0] + 0.5).powi(2) + 0.05;
    let b = (x[0] - 0.6).powi(2);
    a.min(b)
}

pub fn two_basin_oracle() -> ObjectiveOracle {
    ObjectiveOracle::new(1, true, two_basin)
}

/// Convex bowl ||x||^2 in any dimension, for refiner sanity checks.
pub fn quadratic_bowl_oracle(dim: usize) -> ObjectiveOracle {
    ObjectiveOracle::new(dim, true, |x: &[f64]| x.iter().map(|v| v * v).sum())
}
