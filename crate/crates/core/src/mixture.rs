//! Gaussian mixture bookkeeping: densities, responsibilities, component
//! rewards and the closed-form weight update.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::numeric::{logsumexp, LogSumExp};
use crate::sample_db::ActiveSampleSet;

/// Default floor for mixture weights.
pub const DEFAULT_MIN_WEIGHT: f64 = 1e-6;

/// Optimizer state attached to each component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentState {
    /// Stable identifier, never reused within a model.
    pub id: u64,
    /// KL bound of the trust region.
    pub epsilon: f64,
    /// Ridge coefficient of the surrogate fit.
    pub kappa: f64,
    /// Last estimated component reward, if any.
    pub reward: Option<f64>,
    /// Consecutive iterations spent at the weight floor.
    pub low_weight_streak: usize,
    /// Rewards of the most recent low-weight iterations, oldest first.
    pub low_rewards: Vec<f64>,
}

impl ComponentState {
    pub fn new(id: u64, epsilon: f64, kappa: f64) -> Self {
        Self {
            id,
            epsilon,
            kappa,
            reward: None,
            low_weight_streak: 0,
            low_rewards: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<Arc<Gaussian>>,
    states: Vec<ComponentState>,
    next_id: u64,
}

impl MixtureModel {
    /// Builds a mixture; weights must be non-negative and sum to one.
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>, epsilon: f64, kappa: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(VipsError::InvalidInput("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(VipsError::DimensionMismatch {
                expected: components.len(),
                found: weights.len(),
            });
        }
        let dim = components[0].dim();
        if let Some(bad) = components.iter().find(|g| g.dim() != dim) {
            return Err(VipsError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        check_simplex(&weights)?;
        let states = (0..components.len() as u64)
            .map(|id| ComponentState::new(id, epsilon, kappa))
            .collect();
        Ok(Self {
            next_id: components.len() as u64,
            weights,
            components: components.into_iter().map(Arc::new).collect(),
            states,
        })
    }

    pub fn single(g: Gaussian) -> Self {
        Self::new(vec![1.0], vec![g], 1.0, 1e-10).expect("single component mixture is valid")
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Arc<Gaussian>] {
        &self.components
    }

    pub fn component(&self, o: usize) -> &Arc<Gaussian> {
        &self.components[o]
    }

    pub fn states(&self) -> &[ComponentState] {
        &self.states
    }

    pub fn state(&self, o: usize) -> &ComponentState {
        &self.states[o]
    }

    pub fn state_mut(&mut self, o: usize) -> &mut ComponentState {
        &mut self.states[o]
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(VipsError::DimensionMismatch {
                expected: self.len(),
                found: weights.len(),
            });
        }
        check_simplex(&weights)?;
        self.weights = weights;
        Ok(())
    }

    pub fn replace_component(&mut self, o: usize, g: Gaussian) {
        assert_eq!(g.dim(), self.dim());
        self.components[o] = Arc::new(g);
    }

    /// Appends a component with weight `weight`, scaling the others by
    /// `1 − weight`.
    pub fn push_component(&mut self, g: Gaussian, weight: f64, epsilon: f64, kappa: f64) -> Result<()> {
        if g.dim() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: g.dim(),
            });
        }
        if !(0.0..1.0).contains(&weight) {
            return Err(VipsError::InvalidInput(format!("initial weight {weight} outside [0, 1)")));
        }
        for w in &mut self.weights {
            *w *= 1.0 - weight;
        }
        self.weights.push(weight);
        self.components.push(Arc::new(g));
        self.states.push(ComponentState::new(self.next_id, epsilon, kappa));
        self.next_id += 1;
        Ok(())
    }

    /// Removes the given components and renormalizes the remaining weights.
    pub fn remove_components(&mut self, indices: &[usize]) -> Result<()> {
        if indices.len() >= self.len() {
            return Err(VipsError::InvalidInput("cannot remove every component".into()));
        }
        let mut keep = vec![true; self.len()];
        for &i in indices {
            keep[i] = false;
        }
        let mut k = 0;
        self.weights.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        k = 0;
        self.components.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        k = 0;
        self.states.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    /// `log 𝒩(x_s; μ_o, Σ_o)` as an `N × K` matrix.
    pub fn component_log_densities(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.ncols() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: samples.ncols(),
            });
        }
        Ok(self.component_log_densities_rows(samples.transpose().as_slice()))
    }

    /// Same as [`component_log_densities`](Self::component_log_densities)
    /// for row-major samples.
    pub fn component_log_densities_rows(&self, rows: &[f64]) -> DMatrix<f64> {
        let n = rows.len() / self.dim().max(1);
        let mut out = DMatrix::zeros(n, self.len());
        for (o, g) in self.components.iter().enumerate() {
            g.log_density_rows(rows, out.column_mut(o).as_mut_slice());
        }
        out
    }

    /// `log q(x)` per row.
    pub fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        let comp = self.component_log_densities(samples)?;
        Ok(self.log_density_from_components(&comp))
    }

    pub fn log_density_from_components(&self, comp: &DMatrix<f64>) -> Vec<f64> {
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        (0..comp.nrows())
            .map(|s| {
                let mut acc = LogSumExp::default();
                for (o, lw) in log_w.iter().enumerate() {
                    acc.add(lw + comp[(s, o)]);
                }
                acc.value()
            })
            .collect()
    }

    /// `log q(o | x)` as an `N × K` matrix.
    pub fn log_responsibilities(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let comp = self.component_log_densities(samples)?;
        Ok(self.log_responsibilities_from_components(comp))
    }

    /// Same as [`log_responsibilities`](Self::log_responsibilities) from
    /// precomputed component log densities.
    pub fn log_responsibilities_from_components(&self, comp: DMatrix<f64>) -> DMatrix<f64> {
        let log_q = self.log_density_from_components(&comp);
        let mut out = comp;
        for o in 0..self.len() {
            let lw = self.weights[o].ln();
            for (s, lq) in log_q.iter().enumerate() {
                out[(s, o)] += lw - lq;
            }
        }
        out
    }

    /// `Σ_o q(o) H(q(x|o))`.
    pub fn weighted_entropy(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, g)| w * g.entropy())
            .sum()
    }

    /// Draws `n` samples, grouped by component in index order.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let counts = self.sample_counts(n, rng);
        let mut out = DMatrix::zeros(n, self.dim());
        let mut row = 0;
        for (o, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x = self.components[o].sample(c, rng);
            out.rows_mut(row, c).copy_from(&x);
            row += c;
        }
        out
    }

    fn sample_counts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut counts = vec![0usize; self.len()];
        let total: f64 = self.weights.iter().sum();
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = self.len() - 1;
            for (o, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = o;
                    break;
                }
            }
            counts[pick] += 1;
        }
        counts
    }
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(VipsError::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(VipsError::InvalidInput(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Importance-weighted estimate of each component's reward
/// `Σ_s w̄_o(x_s)[R(x_s) + log q̃(o|x_s)] + H(q(x|o))`.
///
/// `log_resp` is the frozen `N × K` responsibility snapshot for the active
/// samples. Components without effective weight keep their previous reward,
/// or `log q(o)` if they have none yet.
pub fn component_rewards(
    model: &MixtureModel,
    active: &ActiveSampleSet,
    log_resp: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if active.is_empty() {
        return Err(VipsError::EmptySampleSet);
    }
    let weights = active.weights();
    let targets = active.log_targets();
    Ok((0..model.len())
        .map(|o| {
            if active.n_eff()[o] <= 0.0 {
                return model.state(o).reward.unwrap_or_else(|| model.weights()[o].ln());
            }
            let mut acc = 0.0;
            for (s, r) in targets.iter().enumerate() {
                let w = weights[(s, o)];
                if w > 0.0 {
                    acc += w * (r + log_resp[(s, o)]);
                }
            }
            acc + model.component(o).entropy()
        })
        .collect())
}

/// Softmax of the rewards followed by a water-filling floor at `min_weight`:
/// entries below the floor are raised to it exactly and the rest rescaled.
pub fn update_weights(rewards: &[f64], min_weight: f64) -> Vec<f64> {
    let k = rewards.len();
    if k == 0 {
        return Vec::new();
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = rewards.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    if min_weight <= 0.0 || min_weight * k as f64 >= 1.0 {
        return w;
    }
    let mut floored = vec![false; k];
    loop {
        let n_floored = floored.iter().filter(|f| **f).count();
        let free_mass = 1.0 - n_floored as f64 * min_weight;
        let free_total: f64 = (0..k).filter(|&i| !floored[i]).map(|i| w[i]).sum();
        let mut changed = false;
        for i in 0..k {
            if !floored[i] && w[i] * free_mass / free_total < min_weight {
                floored[i] = true;
                changed = true;
            }
        }
        if !changed {
            for i in 0..k {
                w[i] = if floored[i] {
                    min_weight
                } else {
                    w[i] * free_mass / free_total
                };
            }
            return w;
        }
    }
}

/// Self-normalized importance estimate of `E_q[log p̃ − log q]` using
/// mixture-level weights `q(x) / z⊂(x)`.
pub fn elbo_estimate(model: &MixtureModel, active: &ActiveSampleSet) -> Result<f64> {
    if active.is_empty() {
        return Err(VipsError::EmptySampleSet);
    }
    let log_q = model.log_density(active.samples())?;
    elbo_from_log_q(&log_q, active)
}

pub(crate) fn elbo_from_log_q(log_q: &[f64], active: &ActiveSampleSet) -> Result<f64> {
    let log_z = active.log_background();
    let lw: Vec<f64> = log_q.iter().zip(log_z).map(|(q, z)| q - z).collect();
    let norm = logsumexp(&lw);
    if !norm.is_finite() {
        return Err(VipsError::NonFinite { what: "ELBO importance weights" });
    }
    let mut acc = 0.0;
    for ((lw, lq), r) in lw.iter().zip(log_q).zip(active.log_targets()) {
        let w = (lw - norm).exp();
        if w > 0.0 {
            acc += w * (r - lq);
        }
    }
    Ok(acc)
}
