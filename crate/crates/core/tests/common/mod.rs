#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use vips::trust_region::DualProblem;
use vips::{Gaussian, QuadraticSurrogate};

/// `A Aᵀ + shift·I` with standard normal `A`, scaled by `scale`.
pub fn random_spd<R: Rng>(d: usize, scale: f64, shift: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let m = (&a * a.transpose()) / d as f64 + DMatrix::identity(d, d) * shift;
    let m = m * scale;
    (&m + m.transpose()) * 0.5
}

pub fn random_vector<R: Rng>(d: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_gaussian<R: Rng>(d: usize, rng: &mut R) -> Gaussian {
    Gaussian::new(random_vector(d, 1.0, rng), random_spd(d, 1.0, 0.2, rng)).unwrap()
}

/// Surrogate with a random symmetric curvature that may be indefinite.
pub fn random_surrogate<R: Rng>(d: usize, rng: &mut R) -> QuadraticSurrogate {
    let curvature = if rng.random_bool(0.7) {
        random_spd(d, 1.0, 0.1, rng)
    } else {
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        (&a + a.transpose()) * 0.5
    };
    QuadraticSurrogate::new(curvature, random_vector(d, 2.0, rng), 0.0)
}

/// Mean and variance of `q(x)^{η/(η+1)} exp(R̃(x))^{1/(η+1)}`, normalized
/// on a uniform grid.
pub fn grid_moments(current: &Gaussian, s: &QuadraticSurrogate, eta: f64) -> (f64, f64) {
    let m = current.mean()[0];
    let sd = current.covariance()[(0, 0)].sqrt();
    let lo = m - 40.0 * sd - 40.0;
    let hi = m + 40.0 * sd + 40.0;
    let n = 400_001;
    let h = (hi - lo) / (n - 1) as f64;
    let logs: Vec<f64> = (0..n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let lq = current.log_density_at(&[x]).unwrap();
            (eta * lq + s.evaluate(&[x])) / (eta + 1.0)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, l) in logs.iter().enumerate() {
        let x = lo + i as f64 * h;
        let w = (l - max).exp();
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Dual objective `G(η)` evaluated through the natural interpolation.
pub fn dual_value(dp: &DualProblem, eta: f64) -> f64 {
    dp.value_and_gradient(eta).unwrap().0
}
