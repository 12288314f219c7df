mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vips::adaptation::{init_covariance, target_entropy};
use vips::mixture::{component_rewards, elbo_estimate};
use vips::targets::GmmTarget;
use vips::{ActiveSampleSet, Gaussian, LogDensity, MixtureModel, SampleDatabase, Target};

fn three_components() -> MixtureModel {
    let comps = vec![
        Gaussian::new(DVector::from_vec(vec![-2.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0])).unwrap(),
        Gaussian::new(DVector::from_vec(vec![2.0, 1.0]), DMatrix::identity(2, 2) * 0.7).unwrap(),
        Gaussian::new(DVector::from_vec(vec![0.0, -3.0]), DMatrix::identity(2, 2) * 1.5).unwrap(),
    ];
    MixtureModel::new(vec![0.25, 0.45, 0.3], comps, 1.0, 1e-10).unwrap()
}

/// Active set holding `n` fresh draws from every component of `model`,
/// scored by `target`.
fn self_sampled(model: &MixtureModel, target: &dyn LogDensity, n: usize, seed: u64) -> ActiveSampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = SampleDatabase::new(model.dim());
    let mut active = ActiveSampleSet::new(model.dim());
    for g in model.components() {
        let x = g.sample(n, &mut rng);
        let y = target.log_density(&x).unwrap();
        let id = db.insert_samples(&x, &y, g).unwrap().origin_id;
        active.add_origin(&db, id).unwrap();
    }
    active.compute_weights(model).unwrap();
    active
}

#[test]
fn rewards_recover_log_weights_when_target_is_model() {
    let model = three_components();
    let target = GmmTarget::from_mixture(model.clone());
    let active = self_sampled(&model, &target, 20_000, 1);
    let log_resp = model.log_responsibilities(active.samples()).unwrap();
    let rewards = component_rewards(&model, &active, &log_resp).unwrap();
    for (r, w) in rewards.iter().zip(model.weights()) {
        assert!((r - w.ln()).abs() <= 0.05, "reward {r} vs log weight {}", w.ln());
    }
}

#[test]
fn elbo_vanishes_when_target_is_model() {
    let model = three_components();
    let target = GmmTarget::from_mixture(model.clone());
    let active = self_sampled(&model, &target, 20_000 / 3, 2);
    let est = elbo_estimate(&model, &active).unwrap();
    assert!(est.abs() <= 0.05, "{est}");
}

#[test]
fn elbo_is_negative_kl_for_a_gaussian_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let q = common::random_gaussian(3, &mut rng);
        let p = Gaussian::new(
            q.mean() + common::random_vector(3, 0.3, &mut rng),
            q.covariance() * rng.random_range(0.7..1.4),
        )
        .unwrap();
        let model = MixtureModel::single(q.clone());
        let target = GmmTarget::from_mixture(MixtureModel::single(p.clone()));
        let active = self_sampled(&model, &target, 20_000, rng.random());
        let est = elbo_estimate(&model, &active).unwrap();
        let kl = q.kl_divergence(&p).unwrap();
        assert!((est + kl).abs() <= 0.05, "estimate {est}, −KL {}", -kl);
    }
}

#[test]
fn responsibilities_are_normalized() {
    let model = three_components();
    let x = model.sample(500, &mut ChaCha8Rng::seed_from_u64(4));
    let lr = model.log_responsibilities(&x).unwrap();
    for row in lr.row_iter() {
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn initial_covariance_meets_the_entropy_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let d = rng.random_range(1..5);
        let k = rng.random_range(1..4);
        let comps: Vec<Gaussian> = (0..k).map(|_| common::random_gaussian(d, &mut rng)).collect();
        let model = MixtureModel::new(vec![1.0 / k as f64; k], comps, 1.0, 1e-10).unwrap();
        let target = Target::from_arc(Arc::new(GmmTarget::random(d, 3, &mut rng)));
        let h = target_entropy(&model);
        let mean = common::random_vector(d, 3.0, &mut rng);
        let mut db = SampleDatabase::new(d);
        let init = init_covariance(&model, &mean, h, &target, &mut db, 10, &mut rng).unwrap();
        let g = Gaussian::new(mean, init.covariance).unwrap();
        assert!(g.entropy() >= h - 1e-9 * h.abs().max(1.0), "trial {trial}: {} < {h}", g.entropy());
        assert_eq!(init.rewards.len(), vips::adaptation::ALPHA_GRID);
        assert_eq!(target.evaluations() as usize, 10 * d);
    }
}
