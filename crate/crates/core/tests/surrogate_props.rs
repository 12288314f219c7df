mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vips::surrogate::{feature_count, fit_weighted_quadratic};
use vips::{Gaussian, QuadraticSurrogate};

fn rel(a: &QuadraticSurrogate, b: &QuadraticSurrogate) -> f64 {
    let num = (&a.quad - &b.quad).norm() + (&a.linear - &b.linear).norm() + (a.offset - b.offset).abs();
    let den = b.quad.norm() + b.linear.norm() + b.offset.abs();
    num / den.max(1e-300)
}

fn generator<R: Rng>(d: usize, rng: &mut R) -> QuadraticSurrogate {
    QuadraticSurrogate::new(
        common::random_spd(d, 1.0, 0.5, rng),
        common::random_vector(d, 1.0, rng),
        rng.random_range(-3.0..3.0),
    )
}

fn evaluate_all(s: &QuadraticSurrogate, x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter()
        .map(|r| s.evaluate(r.transpose().as_slice()))
        .collect()
}

#[test]
fn exact_quadratics_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for d in [1, 2, 5, 10] {
        for _ in 0..5 {
            let truth = generator(d, &mut rng);
            let comp = common::random_gaussian(d, &mut rng);
            let n = 3 * feature_count(d);
            let x = comp.sample(n, &mut rng);
            let y = evaluate_all(&truth, &x);
            let fit = fit_weighted_quadratic(&x, &y, &vec![1.0 / n as f64; n], 0.0, &comp).unwrap();
            assert!(rel(&fit, &truth) <= 1e-6, "D={d}: {}", rel(&fit, &truth));
        }
    }
}

/// Ordinary least squares on raw features through an SVD, independent of
/// the whitened normal equations used by the fit.
fn ols(x: &DMatrix<f64>, y: &[f64]) -> QuadraticSurrogate {
    let d = x.ncols();
    let f = feature_count(d);
    let phi = DMatrix::from_fn(x.nrows(), f, |s, c| {
        vips::surrogate::quadratic_features(x.row(s).transpose().as_slice())[c]
    });
    let beta = phi
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-14)
        .unwrap();
    let mut quad = DMatrix::zeros(d, d);
    let mut k = 1 + d;
    for i in 0..d {
        for j in i..d {
            if i == j {
                quad[(i, i)] = -2.0 * beta[k];
            } else {
                quad[(i, j)] = -beta[k];
                quad[(j, i)] = -beta[k];
            }
            k += 1;
        }
    }
    QuadraticSurrogate::new(quad, beta.rows(1, d).into_owned(), beta[0])
}

#[test]
fn uniform_weights_equal_unweighted_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for d in [1, 2, 3] {
        let truth = generator(d, &mut rng);
        let comp = Gaussian::standard(d);
        let n = 200;
        let x = comp.sample(n, &mut rng);
        let y: Vec<f64> = evaluate_all(&truth, &x)
            .into_iter()
            .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fit = fit_weighted_quadratic(&x, &y, &vec![1.0 / n as f64; n], 0.0, &comp).unwrap();
        let reference = ols(&x, &y);
        assert!(rel(&fit, &reference) <= 1e-10, "D={d}: {}", rel(&fit, &reference));
    }
}

#[test]
fn row_permutation_leaves_fit_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let d = 3;
    let comp = common::random_gaussian(d, &mut rng);
    let n = 60;
    let x = comp.sample(n, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let fit = fit_weighted_quadratic(&x, &y, &w, 1e-8, &comp).unwrap();

    let perm: Vec<usize> = (0..n).rev().collect();
    let xp = DMatrix::from_fn(n, d, |i, j| x[(perm[i], j)]);
    let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
    let fit_p = fit_weighted_quadratic(&xp, &yp, &wp, 1e-8, &comp).unwrap();
    assert!(rel(&fit_p, &fit) <= 1e-10);
}

#[test]
fn duplicated_rows_with_split_weights_leave_fit_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let d = 2;
    let comp = common::random_gaussian(d, &mut rng);
    let n = 40;
    let x = comp.sample(n, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let fit = fit_weighted_quadratic(&x, &y, &w, 1e-9, &comp).unwrap();

    let mut x2 = DMatrix::zeros(n + 5, d);
    x2.rows_mut(0, n).copy_from(&x);
    let mut y2 = y.clone();
    let mut w2 = w.clone();
    for k in 0..5 {
        x2.set_row(n + k, &x.row(k));
        y2.push(y[k]);
        w2[k] /= 2.0;
        w2.push(w[k] / 2.0);
    }
    let fit2 = fit_weighted_quadratic(&x2, &y2, &w2, 1e-9, &comp).unwrap();
    assert!(rel(&fit2, &fit) <= 1e-8);
}

#[test]
fn zero_weight_rows_are_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let comp = Gaussian::standard(2);
    let truth = generator(2, &mut rng);
    let x = comp.sample(30, &mut rng);
    let mut y = evaluate_all(&truth, &x);
    let mut w = vec![1.0; 30];
    y[0] = 1e6;
    w[0] = 0.0;
    let fit = fit_weighted_quadratic(&x, &y, &w, 0.0, &comp).unwrap();
    assert!(rel(&fit, &truth) <= 1e-8);
}
