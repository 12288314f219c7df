//! Adding and deleting mixture components.
//!
//! New components are centred on the database sample with the highest
//! approximate initial reward, with an entropy matching the current mixture
//! and a covariance chosen by a line search between an isotropic matrix and
//! a responsibility-weighted average of the existing covariances.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VipsError};
use crate::gaussian::{scale_to_entropy, Gaussian};
use crate::mixture::MixtureModel;
use crate::numeric::{normalize_log_weights, symmetrize};
use crate::sample_db::SampleDatabase;
use crate::targets::Target;

pub const DEFAULT_DELTAS: [f64; 5] = [1000.0, 500.0, 200.0, 100.0, 50.0];

/// Threshold used for the model density in the candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateClamp {
    /// `max_i log q(x_i) − Δ`, the largest model density over all candidates.
    #[default]
    DensityMax,
    /// `−Δ + D/2 − H_init`, the log density of the new component at its
    /// mean with `−Δ` standing in for its log weight.
    ExactEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationState {
    deltas: Vec<f64>,
    cursor: usize,
    pub add_rate: usize,
    pub del_rate: usize,
    pub initial_weight: f64,
    pub min_weight: f64,
    pub initial_epsilon: f64,
    pub initial_kappa: f64,
    pub clamp: CandidateClamp,
    pub samples_per_dim: usize,
    /// Only the most recent origins are scored as candidates when set.
    pub candidate_origins: Option<usize>,
}

impl Default for AdaptationState {
    fn default() -> Self {
        Self {
            deltas: DEFAULT_DELTAS.to_vec(),
            cursor: 0,
            add_rate: 30,
            del_rate: 10,
            initial_weight: 1e-29,
            min_weight: 1e-6,
            initial_epsilon: 1.0,
            initial_kappa: 1e-10,
            clamp: CandidateClamp::DensityMax,
            samples_per_dim: 10,
            candidate_origins: None,
        }
    }
}

impl AdaptationState {
    pub fn with_deltas(deltas: Vec<f64>) -> Self {
        assert!(!deltas.is_empty());
        Self {
            deltas,
            ..Self::default()
        }
    }

    /// Returns the current Δ and advances the cursor cyclically.
    pub fn next_delta(&mut self) -> f64 {
        let d = self.deltas[self.cursor];
        self.cursor = (self.cursor + 1) % self.deltas.len();
        d
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

/// Best candidate of a scoring pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Position in the scored arrays.
    pub index: usize,
    pub score: f64,
    pub threshold: f64,
}

/// Scores `R(x_s) − max(log q(x_s), threshold)` and returns the argmax,
/// ties broken towards the lowest index. With `threshold = None` the
/// threshold is `max_i log q(x_i) − Δ`.
pub fn score_candidates(
    log_targets: &[f64],
    log_q: &[f64],
    delta: f64,
    threshold: Option<f64>,
) -> Result<Candidate> {
    if log_targets.is_empty() {
        return Err(VipsError::EmptyDatabase);
    }
    let threshold = threshold.unwrap_or_else(|| {
        log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max) - delta
    });
    let mut best = Candidate {
        index: 0,
        score: f64::NEG_INFINITY,
        threshold,
    };
    for (i, (r, q)) in log_targets.iter().zip(log_q).enumerate() {
        let score = r - q.max(threshold);
        if score > best.score {
            best.index = i;
            best.score = score;
        }
    }
    Ok(best)
}

/// `Σ_o q(o) H(q(x|o))`.
pub fn target_entropy(model: &MixtureModel) -> f64 {
    model.weighted_entropy()
}

/// Outcome of the covariance line search.
#[derive(Debug, Clone)]
pub struct CovarianceInit {
    pub covariance: DMatrix<f64>,
    pub alpha: f64,
    /// Estimated expected log target for every grid point, `α = 0, 0.1, …, 1`.
    pub rewards: Vec<f64>,
}

pub const ALPHA_GRID: usize = 11;

/// Line search over `Σ_α = α Σ_iso + (1 − α) Σ_avg` for the new component's
/// covariance, maximizing an importance estimate of `E_{𝒩(μ, Σ_α)}[log p̃]`.
///
/// Draws `samples_per_dim · D` samples, half from each end point, evaluates
/// the target on them and stores them in `db`.
pub fn init_covariance(
    model: &MixtureModel,
    mean_new: &DVector<f64>,
    h_init: f64,
    target: &Target,
    db: &mut SampleDatabase,
    samples_per_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CovarianceInit> {
    let dim = model.dim();
    if !h_init.is_finite() {
        return Err(VipsError::NonFinite { what: "initial entropy" });
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    let sigma_iso = &eye * scale_to_entropy(&eye, h_init)?;

    let point = DMatrix::from_row_slice(1, dim, mean_new.as_slice());
    let log_resp = model.log_responsibilities(&point)?;
    let mut avg = DMatrix::<f64>::zeros(dim, dim);
    for (o, g) in model.components().iter().enumerate() {
        let r = log_resp[(0, o)].exp();
        if r > 0.0 {
            avg += g.covariance() * r;
        }
    }
    let avg = symmetrize(&avg);
    let sigma_avg = match scale_to_entropy(&avg, h_init) {
        Ok(c) => avg * c,
        // All responsibilities underflowed; fall back to the plain average.
        Err(_) => {
            let mut plain = DMatrix::<f64>::zeros(dim, dim);
            for (w, g) in model.weights().iter().zip(model.components()) {
                plain += g.covariance() * *w;
            }
            let plain = symmetrize(&plain);
            let c = scale_to_entropy(&plain, h_init)?;
            plain * c
        }
    };

    let g_iso = std::sync::Arc::new(Gaussian::new(mean_new.clone(), sigma_iso.clone())?);
    let g_avg = std::sync::Arc::new(Gaussian::new(mean_new.clone(), sigma_avg.clone())?);
    let n_half = (samples_per_dim * dim).div_ceil(2).max(1);
    let x_iso = g_iso.sample(n_half, rng);
    let x_avg = g_avg.sample(n_half, rng);
    let mut x = DMatrix::zeros(2 * n_half, dim);
    x.rows_mut(0, n_half).copy_from(&x_iso);
    x.rows_mut(n_half, n_half).copy_from(&x_avg);
    let y = target.evaluate(&x)?;
    db.insert_samples(&x_iso, &y[..n_half], &g_iso)?;
    db.insert_samples(&x_avg, &y[n_half..], &g_avg)?;

    let ld_iso = g_iso.log_density(&x)?;
    let ld_avg = g_avg.log_density(&x)?;
    let log_z: Vec<f64> = ld_iso
        .iter()
        .zip(&ld_avg)
        .map(|(a, b)| {
            let m = a.max(*b);
            m + (0.5 * (a - m).exp() + 0.5 * (b - m).exp()).ln()
        })
        .collect();

    let mut rewards = vec![f64::NEG_INFINITY; ALPHA_GRID];
    let mut covs = Vec::with_capacity(ALPHA_GRID);
    for (k, reward) in rewards.iter_mut().enumerate() {
        let alpha = k as f64 / (ALPHA_GRID - 1) as f64;
        let cov = symmetrize(&(&sigma_iso * alpha + &sigma_avg * (1.0 - alpha)));
        if let Ok(g) = Gaussian::new(mean_new.clone(), cov.clone()) {
            let ld = g.log_density(&x)?;
            let lw: Vec<f64> = ld.iter().zip(&log_z).map(|(l, z)| l - z).collect();
            let w = normalize_log_weights(&lw);
            let mut acc = 0.0;
            for (wi, yi) in w.iter().zip(&y) {
                if *wi > 0.0 {
                    acc += wi * yi;
                }
            }
            *reward = acc;
        }
        covs.push(cov);
    }

    // Scan from α = 1 downwards so ties favour the more isotropic matrix.
    let mut best = ALPHA_GRID - 1;
    for k in (0..ALPHA_GRID - 1).rev() {
        let cur = rewards[best];
        if rewards[k] > cur + 1e-12 * (1.0 + cur.abs()) || (cur.is_nan() && !rewards[k].is_nan()) {
            best = k;
        }
    }
    Ok(CovarianceInit {
        covariance: covs.swap_remove(best),
        alpha: best as f64 / (ALPHA_GRID - 1) as f64,
        rewards,
    })
}

/// What happened in an add step.
#[derive(Debug, Clone)]
pub struct AddEvent {
    pub delta: f64,
    pub record_id: u64,
    pub score: f64,
    pub alpha: f64,
    pub line_search_samples: usize,
}

/// Adds one component every `add_rate` iterations, if the database has
/// candidates.
pub fn maybe_add_component(
    model: &mut MixtureModel,
    state: &mut AdaptationState,
    db: &mut SampleDatabase,
    target: &Target,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<AddEvent>> {
    if state.add_rate == 0 || iteration % state.add_rate != 0 || db.is_empty() {
        return Ok(None);
    }
    let delta = state.next_delta();
    let (samples, log_targets, ids) = db.records(state.candidate_origins);
    if ids.is_empty() {
        return Ok(None);
    }
    let log_q = model.log_density(&samples)?;
    let h_init = target_entropy(model);
    let threshold = match state.clamp {
        CandidateClamp::DensityMax => None,
        CandidateClamp::ExactEntropy => Some(-delta + 0.5 * model.dim() as f64 - h_init),
    };
    let best = score_candidates(&log_targets, &log_q, delta, threshold)?;
    let mean = samples.row(best.index).transpose();
    let before = target.evaluations();
    let init = init_covariance(model, &mean, h_init, target, db, state.samples_per_dim, rng)?;
    let g = Gaussian::new(mean, init.covariance)?;
    model.push_component(g, state.initial_weight, state.initial_epsilon, state.initial_kappa)?;
    Ok(Some(AddEvent {
        delta,
        record_id: ids[best.index],
        score: best.score,
        alpha: init.alpha,
        line_search_samples: (target.evaluations() - before) as usize,
    }))
}

/// Updates low-weight streaks from the current weights and rewards.
///
/// A component is *low* when its weight sits at the floor. While low, its
/// streak grows and its reward is appended to a history holding the last
/// `window` values.
pub fn update_deletion_trackers(model: &mut MixtureModel, min_weight: f64, window: usize) {
    for o in 0..model.len() {
        let low = model.weights()[o] <= min_weight * (1.0 + 1e-6);
        let state = model.state_mut(o);
        if low {
            state.low_weight_streak += 1;
            state.low_rewards.push(state.reward.unwrap_or(f64::NEG_INFINITY));
            if state.low_rewards.len() > window.max(1) {
                state.low_rewards.remove(0);
            }
        } else {
            state.low_weight_streak = 0;
            state.low_rewards.clear();
        }
    }
}

fn stagnant(state: &crate::mixture::ComponentState, del_rate: usize) -> bool {
    let h = &state.low_rewards;
    state.low_weight_streak >= del_rate
        && match (h.first(), h.last()) {
            (Some(first), Some(last)) => last.partial_cmp(first) != Some(std::cmp::Ordering::Greater),
            _ => true,
        }
}

/// Removes components that stayed low for `del_rate` iterations without
/// their reward increasing over that period, never the last one nor the
/// highest-weight one. Returns the ids of deleted components.
pub fn delete_components(model: &mut MixtureModel, del_rate: usize) -> Result<Vec<u64>> {
    if model.len() <= 1 {
        return Ok(Vec::new());
    }
    let keep = model
        .weights()
        .iter()
        .enumerate()
        .fold(0, |best, (i, w)| if *w > model.weights()[best] { i } else { best });
    let doomed: Vec<usize> = (0..model.len())
        .filter(|&o| o != keep && stagnant(model.state(o), del_rate))
        .collect();
    if doomed.is_empty() {
        return Ok(Vec::new());
    }
    let ids = doomed.iter().map(|&o| model.state(o).id).collect();
    model.remove_components(&doomed)?;
    Ok(ids)
}
