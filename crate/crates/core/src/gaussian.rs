//! Full-covariance multivariate normal distributions.
//!
//! A [`Gaussian`] is immutable after construction and caches both its moment
//! form (mean, covariance, Cholesky factor) and its natural form
//! (precision `Q = Σ⁻¹`, shift `q = Q μ`). All batch operations take samples
//! as rows of an `N × D` matrix.

use std::f64::consts::{E, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VipsError};
use crate::numeric::{relative_asymmetry, symmetrize};

/// Relative Frobenius asymmetry accepted before a matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Lower triangle of `chol`, packed row by row.
    chol_packed: Vec<f64>,
    precision: DMatrix<f64>,
    shift: DVector<f64>,
    log_det_cov: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(VipsError::NonFinite { what: "matrix" });
    }
    let asymmetry = relative_asymmetry(m);
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(VipsError::NotSymmetric { asymmetry });
    }
    Ok(symmetrize(m))
}

impl Gaussian {
    /// Builds a Gaussian from mean and covariance. Covariances within the
    /// symmetry tolerance are symmetrized before factorization.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(VipsError::DimensionMismatch {
                expected: dim,
                found: covariance.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(VipsError::NonFinite { what: "mean" });
        }
        let covariance = check_symmetric(&covariance)?;
        let chol = Cholesky::new(covariance.clone()).ok_or(VipsError::NotPositiveDefinite {
            what: "covariance",
        })?;
        let l = chol.l();
        let log_det_cov = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = symmetrize(&chol.inverse());
        let shift = &precision * &mean;
        let chol_packed = (0..dim).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|ij| l[ij]).collect();
        Ok(Self {
            mean,
            covariance,
            chol: l,
            chol_packed,
            precision,
            shift,
            log_det_cov,
        })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self::isotropic(DVector::zeros(dim), 1.0).expect("identity covariance is valid")
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let dim = mean.len();
        Self::new(mean, DMatrix::identity(dim, dim) * variance)
    }

    /// Builds a Gaussian from natural parameters: `Σ = Q⁻¹`, `μ = Q⁻¹ q`.
    pub fn from_natural(precision: &DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let dim = shift.len();
        if precision.nrows() != dim || precision.ncols() != dim {
            return Err(VipsError::DimensionMismatch {
                expected: dim,
                found: precision.nrows(),
            });
        }
        let precision = check_symmetric(precision)?;
        let chol = Cholesky::new(precision).ok_or(VipsError::NotPositiveDefinite {
            what: "natural precision",
        })?;
        let mean = chol.solve(shift);
        let covariance = symmetrize(&chol.inverse());
        Self::new(mean, covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Σ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Natural precision `Q = Σ⁻¹`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Natural shift `q = Σ⁻¹ μ`.
    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    /// `½ log |2πe Σ|`.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * (d * (2.0 * PI * E).ln() + self.log_det_cov)
    }

    fn log_norm_const(&self) -> f64 {
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det_cov)
    }

    /// Solves `L z = x − μ` for every row `x` of `samples`; returns `D × N`.
    fn whiten_rows(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = samples.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        self.chol.solve_lower_triangular_unchecked_mut(&mut centered);
        centered
    }

    /// Maps each row `x` to whitened coordinates `L⁻¹(x − μ)`; returns `N × D`.
    pub fn whiten(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(samples)?;
        Ok(self.whiten_rows(samples).transpose())
    }

    fn check_cols(&self, samples: &DMatrix<f64>) -> Result<()> {
        if samples.ncols() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: samples.ncols(),
            });
        }
        Ok(())
    }

    /// `log 𝒩(x; μ, Σ)` for every row of `samples`.
    pub fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_cols(samples)?;
        let rows = samples.transpose();
        let mut out = vec![0.0; samples.nrows()];
        self.log_density_rows(rows.as_slice(), &mut out);
        Ok(out)
    }

    /// Row-major variant of [`log_density`](Self::log_density): `rows` holds
    /// `out.len()` samples of length `D` back to back.
    pub fn log_density_rows(&self, rows: &[f64], out: &mut [f64]) {
        let d = self.dim();
        assert_eq!(rows.len(), d * out.len(), "row buffer does not match output length");
        let c = self.log_norm_const();
        let mean = self.mean.as_slice();
        let l = &self.chol_packed;
        let mut z = vec![0.0; d];
        for (x, o) in rows.chunks_exact(d.max(1)).zip(out.iter_mut()) {
            let mut sq = 0.0;
            let mut k = 0;
            for i in 0..d {
                let mut v = x[i] - mean[i];
                for j in 0..i {
                    v -= l[k + j] * z[j];
                }
                v /= l[k + i];
                z[i] = v;
                sq += v * v;
                k += i + 1;
            }
            *o = c - 0.5 * sq;
        }
    }

    pub fn log_density_at(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.log_norm_const() - 0.5 * self.mahalanobis_sq(x))
    }

    /// Squared Mahalanobis distance `(x − μ)ᵀ Σ⁻¹ (x − μ)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let mut diff = DVector::from_column_slice(x) - &self.mean;
        self.chol.solve_lower_triangular_unchecked_mut(&mut diff);
        diff.norm_squared()
    }

    /// Draws `n` samples as rows, `x = μ + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let z = DMatrix::<f64>::from_fn(d, n, |_, _| rng.sample(StandardNormal));
        let mut x = &self.chol * z;
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x.transpose()
    }

    /// Closed-form `KL(self ‖ other)`, clamped at zero against rounding.
    pub fn kl_divergence(&self, other: &Gaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let d = self.dim() as f64;
        let mut m = self.chol.clone();
        other.chol.solve_lower_triangular_unchecked_mut(&mut m);
        let trace = m.norm_squared();
        let maha = other.mahalanobis_sq(self.mean.as_slice());
        let kl = 0.5 * (trace + maha - d + other.log_det_cov - self.log_det_cov);
        Ok(kl.max(0.0))
    }

    /// Same mean, covariance multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.mean.clone(), &self.covariance * c)
    }
}

/// Factor `c` such that `c Σ` has entropy `target_entropy`:
/// `c = exp((2 H − log |2πe Σ|) / D)`.
pub fn scale_to_entropy(covariance: &DMatrix<f64>, target_entropy: f64) -> Result<f64> {
    let dim = covariance.nrows();
    let chol = Cholesky::<f64, Dyn>::new(check_symmetric(covariance)?).ok_or(
        VipsError::NotPositiveDefinite {
            what: "covariance",
        },
    )?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(entropy_scale(dim, log_det, target_entropy))
}

pub(crate) fn entropy_scale(dim: usize, log_det_cov: f64, target_entropy: f64) -> f64 {
    let d = dim as f64;
    let log_det_2pie = d * (2.0 * PI * E).ln() + log_det_cov;
    ((2.0 * target_entropy - log_det_2pie) / d).exp()
}

/// Smallest-eigenvalue style check: whether a symmetric matrix admits a
/// Cholesky factorization.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && Cholesky::new(m.clone()).is_some()
}
