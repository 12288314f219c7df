use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{log_sigmoid, LogDensity};
use crate::error::Result;

const PRIOR_VARIANCE: f64 = 100.0;
const HIDDEN_NORM: f64 = 3.0;
const LABEL_NOISE: f64 = 0.05;

/// Bayesian logistic regression on synthetic standardized data with an
/// isotropic Gaussian prior of variance 100.
#[derive(Debug, Clone)]
pub struct LogisticRegressionTarget {
    features: DMatrix<f64>,
    /// `2y − 1` per data point.
    signs: DVector<f64>,
    hidden: DVector<f64>,
}

impl LogisticRegressionTarget {
    /// Features are drawn standard normal and standardized per column;
    /// labels come from a hidden weight vector of norm 3 with 5 % flipped.
    pub fn synthetic<R: Rng + ?Sized>(n_data: usize, dim: usize, rng: &mut R) -> Self {
        assert!(n_data >= 1 && dim >= 1);
        let mut features = DMatrix::<f64>::from_fn(n_data, dim, |_, _| rng.sample(StandardNormal));
        for mut col in features.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / n_data as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        let mut hidden = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        hidden *= HIDDEN_NORM / hidden.norm();
        let scores = &features * &hidden;
        let signs = DVector::from_iterator(
            n_data,
            scores.iter().map(|s| {
                let label = if *s > 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < LABEL_NOISE {
                    -label
                } else {
                    label
                }
            }),
        );
        Self::new(features, signs, hidden)
    }

    pub fn new(features: DMatrix<f64>, signs: DVector<f64>, hidden: DVector<f64>) -> Self {
        Self {
            features,
            signs,
            hidden,
        }
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Labels in {0, 1}.
    pub fn labels(&self) -> Vec<u8> {
        self.signs.iter().map(|s| u8::from(*s > 0.0)).collect()
    }

    pub fn hidden_weights(&self) -> &DVector<f64> {
        &self.hidden
    }

    pub fn n_data(&self) -> usize {
        self.features.nrows()
    }
}

impl LogDensity for LogisticRegressionTarget {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.dim() as f64;
        let prior_norm = -0.5 * d * (2.0 * PI * PRIOR_VARIANCE).ln();
        // n_data × N matrix of logits.
        let logits = &self.features * samples.transpose();
        Ok(logits
            .column_iter()
            .zip(samples.row_iter())
            .map(|(col, w)| {
                let lik: f64 = col
                    .iter()
                    .zip(self.signs.iter())
                    .map(|(t, s)| log_sigmoid(s * t))
                    .sum();
                lik + prior_norm - 0.5 * w.norm_squared() / PRIOR_VARIANCE
            })
            .collect())
    }

    fn name(&self) -> &str {
        "logreg"
    }
}
