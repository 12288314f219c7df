mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vips::gaussian::scale_to_entropy;
use vips::Gaussian;

fn gaussian_strategy() -> impl Strategy<Value = Gaussian> {
    (1usize..6, any::<u64>()).prop_map(|(d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_gaussian(d, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn natural_round_trip(g in gaussian_strategy()) {
        let back = Gaussian::from_natural(g.precision(), g.shift()).unwrap();
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm().max(1e-300);
        prop_assert!(rel(back.covariance(), g.covariance()) <= 1e-8);
        let dm = (back.mean() - g.mean()).norm() / g.mean().norm().max(1.0);
        prop_assert!(dm <= 1e-8);
    }

    #[test]
    fn kl_non_negative_and_zero_on_self(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_gaussian(d, &mut rng);
        let b = common::random_gaussian(d, &mut rng);
        prop_assert!(a.kl_divergence(&b).unwrap() > 0.0);
        prop_assert!(a.kl_divergence(&a).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn entropy_scaling_is_exact(g in gaussian_strategy(), h in -5.0f64..10.0) {
        let c = scale_to_entropy(g.covariance(), h).unwrap();
        let scaled = Gaussian::new(g.mean().clone(), g.covariance() * c).unwrap();
        prop_assert!((scaled.entropy() - h).abs() <= 1e-10 * h.abs().max(1.0));
    }

    #[test]
    fn log_density_consistent_with_pointwise(g in gaussian_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = g.sample(8, &mut rng);
        let batch = g.log_density(&x).unwrap();
        for (i, v) in batch.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let single = g.log_density_at(&row).unwrap();
            prop_assert!((v - single).abs() <= 1e-10 * single.abs().max(1.0));
        }
    }
}

#[test]
fn one_dimensional_density_matches_grid_normalization() {
    let g = Gaussian::new(DVector::from_element(1, 0.7), DMatrix::from_element(1, 1, 2.3)).unwrap();
    let (lo, hi, n) = (-30.0, 30.0, 600_001);
    let h = (hi - lo) / (n - 1) as f64;
    let x = DMatrix::from_fn(n, 1, |i, _| lo + i as f64 * h);
    let ld = g.log_density(&x).unwrap();
    let z: f64 = ld.iter().map(|v| v.exp()).sum::<f64>() * h;
    assert!((z - 1.0).abs() < 1e-8, "{z}");
    for (i, v) in ld.iter().enumerate().step_by(50_000) {
        assert!((v.exp() - (v.exp() / z)).abs() < 1e-8, "row {i}");
    }
}

#[test]
fn kl_of_thousand_random_pairs_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..1000 {
        let d = 1 + k % 6;
        let a = common::random_gaussian(d, &mut rng);
        let b = common::random_gaussian(d, &mut rng);
        assert!(a.kl_divergence(&b).unwrap() >= 0.0);
    }
}
