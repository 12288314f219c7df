//! Quadratic reward surrogates fitted by importance-weighted ridge regression.
//!
//! Regression runs in the whitened coordinates `x̃ = L⁻¹(x − μ)` of the
//! component being updated; the fitted coefficients are then mapped back to
//! the original space.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::numeric::symmetrize;

/// Default clamp range for the ridge coefficient.
pub const DEFAULT_KAPPA_RANGE: (f64, f64) = (1e-14, 1e-6);

/// `R̃(x) = −½ xᵀ R x + xᵀ r + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    pub quad: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

impl QuadraticSurrogate {
    pub fn new(quad: DMatrix<f64>, linear: DVector<f64>, offset: f64) -> Self {
        Self {
            quad: symmetrize(&quad),
            linear,
            offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        -0.5 * x.dot(&(&self.quad * &x)) + x.dot(&self.linear) + self.offset
    }
}

/// Length of the quadratic feature vector in `dim` dimensions.
pub fn feature_count(dim: usize) -> usize {
    1 + dim + dim * (dim + 1) / 2
}

/// `(1, x₁ … x_D, x_i x_j for i ≤ j)` with the quadratic terms in row-major
/// upper-triangular order.
pub fn quadratic_features(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_count(x.len()));
    out.push(1.0);
    out.extend_from_slice(x);
    for i in 0..x.len() {
        for j in i..x.len() {
            out.push(x[i] * x[j]);
        }
    }
    out
}

/// Weighted ridge fit of `y ≈ R̃(x)`.
///
/// Rows with zero weight or non-finite `y` are ignored. The ridge term `κ`
/// applies to every coefficient except the constant. A failed factorization
/// of the normal equations, or non-finite coefficients, yields
/// [`VipsError::FitFailed`].
pub fn fit_weighted_quadratic(
    samples: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    kappa: f64,
    whitener: &Gaussian,
) -> Result<QuadraticSurrogate> {
    let dim = whitener.dim();
    let n = samples.nrows();
    if samples.ncols() != dim {
        return Err(VipsError::DimensionMismatch {
            expected: dim,
            found: samples.ncols(),
        });
    }
    if y.len() != n || weights.len() != n {
        return Err(VipsError::DimensionMismatch {
            expected: n,
            found: if y.len() != n { y.len() } else { weights.len() },
        });
    }

    let rows: Vec<usize> = (0..n)
        .filter(|&s| weights[s] > 0.0 && y[s].is_finite())
        .collect();
    if rows.is_empty() {
        return Err(VipsError::EmptySampleSet);
    }

    let z = whitener.whiten(samples)?;
    let f = feature_count(dim);
    // Design matrix stored transposed and pre-scaled by √w, so each sample
    // is a contiguous column and the Gram matrix is a plain gemm.
    let mut scaled_t = DMatrix::<f64>::zeros(f, rows.len());
    let mut sqrt_wy = DVector::<f64>::zeros(rows.len());
    for (r, &s) in rows.iter().enumerate() {
        let sw = weights[s].sqrt();
        let feats = quadratic_features(z.row(s).transpose().as_slice());
        for (dst, v) in scaled_t.column_mut(r).iter_mut().zip(feats) {
            *dst = sw * v;
        }
        sqrt_wy[r] = sw * y[s];
    }

    let scaled = scaled_t.transpose();
    let mut gram = &scaled_t * &scaled;
    for i in 1..f {
        gram[(i, i)] += kappa;
    }
    let rhs = &scaled_t * &sqrt_wy;
    let beta = Cholesky::new(gram)
        .ok_or(VipsError::FitFailed)?
        .solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(VipsError::FitFailed);
    }

    // Unpack whitened-space coefficients.
    let c_tilde = beta[0];
    let l_tilde = DVector::from_iterator(dim, beta.iter().skip(1).take(dim).copied());
    let mut r_tilde = DMatrix::<f64>::zeros(dim, dim);
    let mut k = 1 + dim;
    for i in 0..dim {
        for j in i..dim {
            if i == j {
                r_tilde[(i, i)] = -2.0 * beta[k];
            } else {
                r_tilde[(i, j)] = -beta[k];
                r_tilde[(j, i)] = -beta[k];
            }
            k += 1;
        }
    }

    // Back to original coordinates: R = L⁻ᵀ R̃ L⁻¹, ℓ = L⁻ᵀ ℓ̃.
    let l = whitener.chol();
    let a = l
        .tr_solve_lower_triangular(&r_tilde)
        .ok_or(VipsError::FitFailed)?;
    let quad = l
        .tr_solve_lower_triangular(&a.transpose())
        .ok_or(VipsError::FitFailed)?
        .transpose();
    let quad = symmetrize(&quad);
    let ell = l
        .tr_solve_lower_triangular(&l_tilde)
        .ok_or(VipsError::FitFailed)?;
    let mu = whitener.mean();
    let r_mu = &quad * mu;
    let linear = &r_mu + &ell;
    let offset = c_tilde - ell.dot(mu) - 0.5 * mu.dot(&r_mu);

    if quad.iter().chain(linear.iter()).any(|v| !v.is_finite()) || !offset.is_finite() {
        return Err(VipsError::FitFailed);
    }
    Ok(QuadraticSurrogate {
        quad,
        linear,
        offset,
    })
}

/// `×10` after a failed fit, `÷2` after a success, clamped to `range`.
pub fn adapt_ridge(kappa: f64, fit_succeeded: bool, range: (f64, f64)) -> f64 {
    let next = if fit_succeeded { kappa / 2.0 } else { kappa * 10.0 };
    next.clamp(range.0, range.1)
}
