//! KL-constrained update of a single Gaussian against a quadratic surrogate.
//!
//! The new distribution is a geometric interpolation between the current
//! component and `exp(R̃)`, expressed in natural parameters:
//! `Q(η) = (η Q + R) / (η + 1)`, `q(η) = (η q + r) / (η + 1)`. The step size
//! `η` minimizes the convex dual
//!
//! `G(η) = η ε − η A(Q, q) + (η + 1) A(Q(η), q(η))`,
//!
//! where `A(Q, q) = ½ qᵀQ⁻¹q + ½ log|2π Q⁻¹|` is the Gaussian log-partition.
//! With this sign convention `G′(η) = ε − KL(q_η ‖ q)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, VipsError};
use crate::gaussian::{is_positive_definite, Gaussian};
use crate::surrogate::QuadraticSurrogate;

/// Default clamp range for per-component KL bounds.
pub const DEFAULT_EPSILON_RANGE: (f64, f64) = (1e-2, 5.0);
/// Largest step size tried before an update is rejected.
pub const ETA_MAX: f64 = 1e10;
const ETA_MARGIN: f64 = 1e-6;
const ROOT_TOL: f64 = 1e-5;
const BRACKET_TOL: f64 = 1e-12;
const MAX_ROOT_ITERS: usize = 300;

/// Natural-parameter log-partition `A(Q, q)` of a Gaussian.
fn log_partition(g: &Gaussian) -> f64 {
    let d = g.dim() as f64;
    0.5 * g.shift().dot(g.mean()) + 0.5 * (d * (2.0 * PI).ln() + g.log_det_cov())
}

#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    current: &'a Gaussian,
    surrogate: &'a QuadraticSurrogate,
    epsilon: f64,
    eta_min: f64,
}

impl<'a> DualProblem<'a> {
    /// Sets up the dual and finds the smallest feasible step size.
    ///
    /// With `Σ = L Lᵀ`, `η Q + R = L⁻ᵀ(η I + Lᵀ R L)L⁻¹`, so feasibility is
    /// governed by the smallest eigenvalue of `Lᵀ R L`.
    pub fn new(
        current: &'a Gaussian,
        surrogate: &'a QuadraticSurrogate,
        epsilon: f64,
    ) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(VipsError::InvalidInput(format!(
                "KL bound must be positive, got {epsilon}"
            )));
        }
        if surrogate.dim() != current.dim() || surrogate.quad.nrows() != current.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: current.dim(),
                found: surrogate.dim(),
            });
        }
        if surrogate
            .quad
            .iter()
            .chain(surrogate.linear.iter())
            .any(|v| !v.is_finite())
        {
            return Err(VipsError::UpdateRejected {
                reason: "non-finite surrogate".into(),
            });
        }
        let l = current.chol();
        let m = l.transpose() * &surrogate.quad * l;
        let m = (&m + m.transpose()) * 0.5;
        let lambda_min = SymmetricEigen::new(m).eigenvalues.min();

        let mut dp = Self {
            current,
            surrogate,
            epsilon,
            eta_min: 0.0,
        };
        if lambda_min > 0.0 && is_positive_definite(&dp.interpolate_natural(0.0).0) {
            return Ok(dp);
        }
        let mut eta = (-lambda_min).max(f64::MIN_POSITIVE) * (1.0 + ETA_MARGIN);
        while !is_positive_definite(&dp.interpolate_natural(eta).0) {
            eta = eta.max(1e-12) * 2.0;
            if eta > ETA_MAX {
                break;
            }
        }
        if eta > ETA_MAX {
            return Err(VipsError::UpdateRejected {
                reason: format!("surrogate too indefinite (smallest eigenvalue {lambda_min:e})"),
            });
        }
        dp.eta_min = eta;
        Ok(dp)
    }

    pub fn eta_min(&self) -> f64 {
        self.eta_min
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `(Q(η), q(η))` as exact convex combinations.
    pub fn interpolate_natural(&self, eta: f64) -> (DMatrix<f64>, DVector<f64>) {
        let a = eta / (eta + 1.0);
        let b = 1.0 / (eta + 1.0);
        let q_mat = self.current.precision() * a + &self.surrogate.quad * b;
        let q_vec = self.current.shift() * a + &self.surrogate.linear * b;
        (q_mat, q_vec)
    }

    /// The Gaussian with natural parameters `(Q(η), q(η))`.
    pub fn gaussian_at(&self, eta: f64) -> Result<Gaussian> {
        let (q_mat, q_vec) = self.interpolate_natural(eta);
        Gaussian::from_natural(&q_mat, &q_vec).map_err(|_| VipsError::InfeasibleStep { eta })
    }

    /// `G′(η) = ε − KL(q_η ‖ q)`.
    pub fn gradient(&self, eta: f64) -> Result<f64> {
        let g = self.gaussian_at(eta)?;
        Ok(self.epsilon - g.kl_divergence(self.current)?)
    }

    /// `(G(η), G′(η))`.
    pub fn value_and_gradient(&self, eta: f64) -> Result<(f64, f64)> {
        let g = self.gaussian_at(eta)?;
        let value = eta * self.epsilon - eta * log_partition(self.current)
            + (eta + 1.0) * log_partition(&g);
        let grad = self.epsilon - g.kl_divergence(self.current)?;
        Ok((value, grad))
    }

    /// Root of the monotone gradient on `[η_min, ∞)`, or `η_min` when the
    /// constraint is inactive there.
    pub fn solve(&self) -> Result<f64> {
        let eps = self.epsilon;
        let grad = |eta: f64| self.gradient(eta).unwrap_or(f64::NEG_INFINITY);

        let g_min = grad(self.eta_min);
        if g_min >= 0.0 {
            return Ok(self.eta_min);
        }

        let mut lo = self.eta_min;
        let mut f_lo = g_min;
        let mut hi = (2.0 * self.eta_min).max(1.0);
        let mut f_hi = grad(hi);
        while f_hi < 0.0 {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            if hi > ETA_MAX {
                return Err(VipsError::UpdateRejected {
                    reason: "no step size satisfies the KL bound".into(),
                });
            }
            f_hi = grad(hi);
        }
        if f_hi <= ROOT_TOL * eps {
            return Ok(hi);
        }

        // Illinois regula falsi; falls back to bisection when the lower end is
        // infeasible.
        let mut side = 0i8;
        for _ in 0..MAX_ROOT_ITERS {
            if hi - lo <= BRACKET_TOL * hi {
                break;
            }
            let mid = if f_lo.is_finite() {
                let m = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
                if m > lo && m < hi {
                    m
                } else {
                    0.5 * (lo + hi)
                }
            } else {
                0.5 * (lo + hi)
            };
            let f_mid = grad(mid);
            if f_mid.abs() <= ROOT_TOL * eps {
                return Ok(mid);
            }
            if f_mid < 0.0 {
                lo = mid;
                f_lo = f_mid;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = mid;
                f_hi = f_mid;
                if side == 1 && f_lo.is_finite() {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        Ok(hi)
    }
}

/// Trust-region update of `current` towards `exp(R̃)` with `KL ≤ ε`.
pub fn gva_update(
    current: &Gaussian,
    surrogate: &QuadraticSurrogate,
    epsilon: f64,
) -> Result<Gaussian> {
    let dp = DualProblem::new(current, surrogate, epsilon)?;
    let eta = dp.solve()?;
    dp.gaussian_at(eta).map_err(|_| VipsError::UpdateRejected {
        reason: format!("step size {eta:e} is numerically infeasible"),
    })
}

/// `×1.1` on improvement, `×0.8` otherwise, clamped to `range`.
pub fn adapt_kl_bound(epsilon: f64, improved: bool, range: (f64, f64)) -> f64 {
    let next = if improved { epsilon * 1.1 } else { epsilon * 0.8 };
    next.clamp(range.0, range.1)
}
