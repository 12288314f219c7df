//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vips::targets::GmmTarget;
use vips::{Gaussian, MixtureModel, QuadraticSurrogate, Target};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A well-conditioned Gaussian with correlated coordinates.
pub fn gaussian(dim: usize) -> Gaussian {
    let cov = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.3f64.powi((i as i32 - j as i32).abs()) });
    let mean = DVector::from_fn(dim, |i, _| i as f64 * 0.1);
    Gaussian::new(mean, cov).expect("diagonally dominant")
}

/// A concave quadratic pulling towards a shifted optimum.
pub fn surrogate(dim: usize) -> QuadraticSurrogate {
    QuadraticSurrogate::new(DMatrix::identity(dim, dim) * 0.5, DVector::from_element(dim, 1.0), 0.0)
}

/// A mixture of `k` components spread along the first axis.
pub fn mixture(dim: usize, k: usize) -> MixtureModel {
    let comps = (0..k)
        .map(|o| {
            let mut mean = DVector::zeros(dim);
            mean[0] = 4.0 * o as f64;
            Gaussian::new(mean, DMatrix::identity(dim, dim)).expect("identity")
        })
        .collect();
    MixtureModel::new(vec![1.0 / k as f64; k], comps, 1.0, 1e-10).expect("valid mixture")
}

pub fn gmm_target(dim: usize, k: usize, seed: u64) -> Target {
    Target::new(GmmTarget::random(dim, k, &mut rng(seed)))
}
