//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;

/// Relative Frobenius asymmetry `‖A − Aᵀ‖ / ‖A‖` (0 for the zero matrix).
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Numerically stable `log Σ exp(v)`. Returns −∞ for empty input or when all
/// entries are −∞.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| exp_or_zero(v - max)).sum();
    max + sum.ln()
}

/// `exp(x)`, short-circuiting arguments whose result underflows to zero.
#[inline]
pub fn exp_or_zero(x: f64) -> f64 {
    if x < -746.0 {
        0.0
    } else {
        x.exp()
    }
}

/// Terms this far below the running maximum are dropped by [`LogSumExp`];
/// each would contribute less than `2e-22` relative.
pub const LSE_CUTOFF: f64 = 50.0;

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled_sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY || v < self.max - LSE_CUTOFF {
            return;
        }
        if v > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled_sum += (v - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }
}

/// Normalizes log-weights into probabilities. All −∞ input gives all zeros.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; log_weights.len()];
    }
    let mut w: Vec<f64> = log_weights.iter().map(|lw| exp_or_zero(lw - max)).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_sum() {
        let v = [0.1, -2.0, 3.5];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - naive).abs() < 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn streaming_accumulator_agrees_with_batch() {
        let v = [-1000.0, 5.0, -3.0, 700.0, 699.5, f64::NEG_INFINITY];
        let mut acc = LogSumExp::default();
        for x in v {
            acc.add(x);
        }
        assert!((acc.value() - logsumexp(&v)).abs() < 1e-12);
    }

    #[test]
    fn log_weights_normalize_to_one() {
        let w = normalize_log_weights(&[-800.0, -801.0, -802.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(normalize_log_weights(&[f64::NEG_INFINITY]), vec![0.0]);
    }
}
