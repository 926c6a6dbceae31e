#![allow(dead_code)]
//! Random designs and priors shared by the integration tests.

use mixedergo::{GlmmDesign, PriorSpec, Variances};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
}

fn indicator_matrix<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, k);
    for i in 0..n {
        // first k rows cover every level
        let level = if i < k { i } else { rng.random_range(0..k) };
        z[(i, level)] = 1.0;
    }
    z
}

/// N ∈ [4, 30], p ∈ [1, 4] with an intercept, r ∈ [1, 3], qᵢ ∈ [1, 5];
/// random-effect blocks are Gaussian or group indicators.
pub fn random_design<R: Rng>(rng: &mut R) -> GlmmDesign {
    let n = rng.random_range(4..=30usize);
    let p = rng.random_range(1..=4usize).min(n - 2);
    let r = rng.random_range(1..=3usize);
    let mut x = DMatrix::from_element(n, p, 1.0);
    if p > 1 {
        x.columns_mut(1, p - 1).copy_from(&gaussian_matrix(rng, n, p - 1));
    }
    let blocks = (0..r)
        .map(|_| {
            let q = rng.random_range(1..=5usize).min(n);
            if rng.random_bool(0.5) { indicator_matrix(rng, n, q) } else { gaussian_matrix(rng, n, q) }
        })
        .collect();
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
    GlmmDesign::new(y, x, blocks).expect("generated shapes are consistent")
}

/// a_e ~ U(−1, 2), aᵢ ~ U(−1.5, 1); each scale is zero or U(0.1, 2) with
/// probability ½.
pub fn random_prior<R: Rng>(rng: &mut R, r: usize) -> PriorSpec {
    let scale = |rng: &mut R| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.1..2.0) };
    let a_e = rng.random_range(-1.0..2.0);
    let b_e = scale(rng);
    let a = (0..r).map(|_| rng.random_range(-1.5..1.0)).collect();
    let b = (0..r).map(|_| scale(rng)).collect();
    PriorSpec { a_e, b_e, a, b }
}

/// Log-uniform over [1e-2, 1e2] per component.
pub fn random_variances<R: Rng>(rng: &mut R, r: usize) -> Variances {
    let mut draw = || 10f64.powf(rng.random_range(-2.0..2.0));
    Variances { e: draw(), u: (0..r).map(|_| draw()).collect() }
}

/// Seeded synthetic response for the balanced two-way layout.
pub fn twoway_y(m: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut g = rng(seed);
    let a: Vec<f64> = (0..m).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
    let b: Vec<f64> = (0..n).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
    let mut y = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            y.push(1.0 + a[i] + b[j] + 0.5 * g.sample::<f64, _>(StandardNormal));
        }
    }
    y
}
