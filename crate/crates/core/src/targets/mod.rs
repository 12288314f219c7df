//! Unnormalized target densities `log p̃(x)`.
//!
//! Concrete targets implement [`LogDensity`]; the optimizer talks to them
//! through [`Target`], which counts evaluations and maps NaN to −∞.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{Result, VipsError};

mod external;
mod gmm;
mod logistic;
mod planar;

pub use external::ExternalTarget;
pub use gmm::GmmTarget;
pub use logistic::LogisticRegressionTarget;
pub use planar::{forward_kinematics, PlanarRobotTarget, NUM_LINKS};

pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `log p̃(x)` for every row of `samples`.
    fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// Exact draws from the normalized target, when available.
    fn sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        None
    }

    fn name(&self) -> &str;
}

/// Evaluation-counting wrapper around a [`LogDensity`].
pub struct Target {
    inner: Arc<dyn LogDensity>,
    evaluations: AtomicU64,
    nan_count: AtomicU64,
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.inner.name())
            .field("dim", &self.inner.dim())
            .field("evaluations", &self.evaluations())
            .finish()
    }
}

impl Target {
    pub fn new<T: LogDensity + 'static>(inner: T) -> Self {
        Self::from_arc(Arc::new(inner))
    }

    pub fn from_arc(inner: Arc<dyn LogDensity>) -> Self {
        Self {
            inner,
            evaluations: AtomicU64::new(0),
            nan_count: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn inner(&self) -> &Arc<dyn LogDensity> {
        &self.inner
    }

    /// Total number of points evaluated so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    /// Number of NaN values replaced by −∞.
    pub fn nan_count(&self) -> u64 {
        self.nan_count.load(Ordering::SeqCst)
    }

    pub fn evaluate(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        if samples.ncols() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: samples.ncols(),
            });
        }
        self.evaluations
            .fetch_add(samples.nrows() as u64, Ordering::SeqCst);
        let mut values = self.inner.log_density(samples)?;
        if values.len() != samples.nrows() {
            return Err(VipsError::TargetEvaluation {
                message: format!(
                    "target returned {} values for {} samples",
                    values.len(),
                    samples.nrows()
                ),
                sample: Vec::new(),
            });
        }
        let mut nans = 0;
        for v in &mut values {
            if v.is_nan() {
                *v = f64::NEG_INFINITY;
                nans += 1;
            }
        }
        if nans > 0 {
            self.nan_count.fetch_add(nans, Ordering::SeqCst);
            log::warn!("{} target returned NaN for {nans} samples; treated as -inf", self.name());
        }
        Ok(values)
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        self.inner.sample(n, rng)
    }
}

/// Numerically stable `log σ(t) = −log(1 + e^{−t})`.
pub(crate) fn log_sigmoid(t: f64) -> f64 {
    -((-t).max(0.0) + (-t.abs()).exp().ln_1p())
}
