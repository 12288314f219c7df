mod common;

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gumbel;
use vips::sample_db::{effective_sample_size, sample_where_needed};
use vips::{ActiveSampleSet, Dissimilarity, Gaussian, MixtureModel, SampleDatabase, Target};
use vips::targets::GmmTarget;

fn gaussian_at(mean: &[f64], var: f64) -> Arc<Gaussian> {
    let d = mean.len();
    Arc::new(Gaussian::new(DVector::from_column_slice(mean), DMatrix::identity(d, d) * var).unwrap())
}

fn insert_from<R: Rng>(db: &mut SampleDatabase, g: &Arc<Gaussian>, n: usize, rng: &mut R) -> u64 {
    let x = g.sample(n, rng);
    let y: Vec<f64> = (0..n).map(|s| -x.row(s).norm_squared()).collect();
    db.insert_samples(&x, &y, g).unwrap().origin_id
}

/// Two origins equidistant from the query component.
fn symmetric_db() -> (SampleDatabase, Gaussian, [u64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut db = SampleDatabase::new(2);
    let a = insert_from(&mut db, &gaussian_at(&[1.0, 0.0], 1.0), 5, &mut rng);
    let b = insert_from(&mut db, &gaussian_at(&[-1.0, 0.0], 1.0), 5, &mut rng);
    (db, Gaussian::standard(2), [a, b])
}

fn first_draw_counts(db: &SampleDatabase, g: &Gaussian, ids: [u64; 2], trials: usize) -> [usize; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0; 2];
    for _ in 0..trials {
        let id = db.first_draw(g, Dissimilarity::Mahalanobis, &mut rng).unwrap().unwrap();
        counts[if id == ids[0] { 0 } else { 1 }] += 1;
    }
    counts
}

#[test]
fn symmetric_origins_are_drawn_equally_often() {
    let (db, g, ids) = symmetric_db();
    let n = 10_000;
    let counts = first_draw_counts(&db, &g, ids, n);
    let expected = n as f64 / 2.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // χ²(1) upper 1% quantile.
    assert!(chi2 < 6.635, "counts {counts:?}, χ² {chi2}");
}

#[test]
fn usage_difference_of_ln9_gives_nine_to_one() {
    let (mut db, g, ids) = symmetric_db();
    db.set_usage(ids[1], 9f64.ln());
    let n = 20_000;
    let counts = first_draw_counts(&db, &g, ids, n);
    let p = counts[0] as f64 / n as f64;
    let se = (0.9f64 * 0.1 / n as f64).sqrt();
    assert!((p - 0.9).abs() < 4.0 * se, "p = {p}");
}

/// Straightforward transcription of the selection pseudo-code: full sort of
/// perturbed logits, add whole origins until the count is reached.
fn reference_selection(
    db: &SampleDatabase,
    model: &MixtureModel,
    n_reuse: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<u64>, Vec<f64>) {
    let origins: Vec<_> = db.origins().collect();
    let mut usage: Vec<f64> = origins.iter().map(|o| o.usage).collect();
    let mut selected = Vec::new();
    let mut seen = HashSet::new();
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    for g in model.components() {
        let mut keys: Vec<(f64, usize)> = origins
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let d = -g.log_density_at(o.gaussian.mean().as_slice()).unwrap();
                (-d - usage[i] + rng.sample::<f64, _>(gumbel), i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut counted = 0;
        let mut drawn = Vec::new();
        for &(_, i) in &keys {
            if counted >= n_reuse {
                break;
            }
            if origins[i].is_empty() {
                continue;
            }
            for &rid in origins[i].record_ids() {
                if seen.insert(rid) {
                    selected.push(rid);
                }
            }
            counted += origins[i].len();
            drawn.push(i);
        }
        for i in drawn {
            usage[i] += 1.0;
        }
    }
    (selected, usage)
}

#[test]
fn selection_replays_the_pseudo_code() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let mut db = SampleDatabase::new(2);
        let n_origins = rng.random_range(1..80);
        for _ in 0..n_origins {
            let m = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let g = gaussian_at(&m, rng.random_range(0.2..2.0));
            let n = rng.random_range(1..12);
            insert_from(&mut db, &g, n, &mut rng);
            if rng.random_bool(0.3) {
                let id = db.origins().last().unwrap().id;
                db.set_usage(id, rng.random_range(0.0..3.0));
            }
        }
        let k = rng.random_range(1..5);
        let comps: Vec<Gaussian> = (0..k)
            .map(|_| common::random_gaussian(2, &mut rng))
            .collect();
        let model = MixtureModel::new(vec![1.0 / k as f64; k], comps, 1.0, 1e-10).unwrap();
        let n_reuse = rng.random_range(1..60);

        let seed = rng.random::<u64>();
        let reference_db = db.clone();
        let (expected, usage) =
            reference_selection(&reference_db, &model, n_reuse, &mut ChaCha8Rng::seed_from_u64(seed));
        let active = db
            .select_samples(&model, n_reuse, Dissimilarity::Mahalanobis, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        assert_eq!(active.record_ids(), &expected[..], "trial {trial}");
        let got: Vec<f64> = db.origins().map(|o| o.usage).collect();
        assert_eq!(got, usage, "trial {trial}");
        for rid in active.record_ids() {
            assert!(reference_db.origins().any(|o| o.record_ids().contains(rid)));
        }
    }
}

#[test]
fn importance_weighted_mean_matches_monte_carlo() {
    // Two origins; the estimate for a third Gaussian between them uses only
    // their samples.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut db = SampleDatabase::new(1);
    let a = insert_from(&mut db, &gaussian_at(&[-1.0], 2.0), 4000, &mut rng);
    let b = insert_from(&mut db, &gaussian_at(&[1.5], 1.0), 4000, &mut rng);
    let mut active = ActiveSampleSet::new(1);
    active.add_origin(&db, a).unwrap();
    active.add_origin(&db, b).unwrap();
    let query = Gaussian::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.8)).unwrap();
    let model = MixtureModel::single(query.clone());
    active.compute_weights(&model).unwrap();

    let w = active.weights().column(0);
    let x = active.samples().column(0);
    let is_mean: f64 = w.iter().zip(x.iter()).map(|(w, x)| w * x).sum();
    let mc = query.sample(8000, &mut rng);
    let mc_mean = mc.column(0).mean();
    let n_eff = active.n_eff()[0];
    let se = (0.8f64 / n_eff).sqrt().hypot((0.8f64 / 8000.0).sqrt());
    assert!((is_mean - mc_mean).abs() <= 3.0 * se, "IS {is_mean} vs MC {mc_mean}, se {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn n_eff_is_bounded_by_support(raw in prop::collection::vec(0.0f64..1.0, 1..50)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let support = w.iter().filter(|&&v| v > 0.0).count() as f64;
        let n = effective_sample_size(&w);
        prop_assert!(n >= 1.0 - 1e-12 && n <= support * (1.0 + 1e-12));
    }
}

#[test]
fn fresh_isolated_components_reach_the_desired_count() {
    let comps = vec![
        Gaussian::new(DVector::from_vec(vec![-30.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
        Gaussian::new(DVector::from_vec(vec![30.0, 0.0]), DMatrix::identity(2, 2) * 2.0).unwrap(),
    ];
    let model = MixtureModel::new(vec![0.5, 0.5], comps, 1.0, 1e-10).unwrap();
    let target = Target::new(GmmTarget::from_mixture(model.clone()));
    let mut db = SampleDatabase::new(2);
    let mut active = ActiveSampleSet::new(2);
    let n_des = 40;
    let drawn = sample_where_needed(&mut db, &mut active, &model, n_des, &target, |o| {
        ChaCha8Rng::seed_from_u64(o as u64)
    })
    .unwrap();
    assert_eq!(drawn, vec![n_des, n_des]);
    for &n in active.n_eff() {
        assert!(n >= n_des as f64 - 1.0, "n_eff {n}");
    }
    let again = sample_where_needed(&mut db, &mut active, &model, n_des, &target, |o| {
        ChaCha8Rng::seed_from_u64(10 + o as u64)
    })
    .unwrap();
    assert!(again.iter().all(|&c| c <= 1));
}
