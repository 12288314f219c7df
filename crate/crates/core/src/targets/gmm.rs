use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Normal, Uniform};

use super::LogDensity;
use crate::error::Result;
use crate::gaussian::Gaussian;
use crate::mixture::MixtureModel;

/// Equal-weight random Gaussian mixture: means uniform in `[−50, 50]^D`,
/// covariances `AᵀA + I` with `A_ij ~ 𝒩(0, (0.1 D)²)`.
#[derive(Debug, Clone)]
pub struct GmmTarget {
    mixture: MixtureModel,
}

impl GmmTarget {
    pub fn random<R: Rng + ?Sized>(dim: usize, num_components: usize, rng: &mut R) -> Self {
        assert!(dim >= 1 && num_components >= 1);
        let uniform = Uniform::new_inclusive(-50.0, 50.0).expect("valid range");
        let normal = Normal::new(0.0, 0.1 * dim as f64).expect("valid std");
        let components: Vec<Gaussian> = (0..num_components)
            .map(|_| {
                let mean = DVector::from_fn(dim, |_, _| rng.sample(uniform));
                let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample(normal));
                let cov = a.transpose() * &a + DMatrix::identity(dim, dim);
                Gaussian::new(mean, cov).expect("AᵀA + I is SPD")
            })
            .collect();
        let weights = vec![1.0 / num_components as f64; num_components];
        Self::from_mixture(MixtureModel::new(weights, components, 1.0, 1e-10).expect("valid mixture"))
    }

    pub fn from_mixture(mixture: MixtureModel) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &MixtureModel {
        &self.mixture
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.mixture.components().iter().map(|g| g.mean().clone()).collect()
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.mixture
            .components()
            .iter()
            .map(|g| g.covariance().clone())
            .collect()
    }
}

impl LogDensity for GmmTarget {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.mixture.log_density(samples)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        Some(self.mixture.sample(n, rng))
    }

    fn name(&self) -> &str {
        "gmm"
    }
}
