//! The optimizer loop.
//!
//! One iteration: add/delete components, select reused samples, draw fresh
//! samples where the effective sample size is short, update the weights,
//! then update every component against a frozen responsibility snapshot
//! and commit all updates together.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::adaptation::{self, AdaptationState, AddEvent};
use crate::config::VipsConfig;
use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::mixture::{component_rewards, elbo_from_log_q, update_weights, ComponentState, MixtureModel};
use crate::numeric::{logsumexp, normalize_log_weights};
use crate::rng::{substream, Phase};
use crate::sample_db::{sample_where_needed, ActiveSampleSet, SampleDatabase};
use crate::surrogate::{adapt_ridge, fit_weighted_quadratic};
use crate::targets::Target;
use crate::trust_region::{adapt_kl_bound, gva_update};

/// Component added this iteration (with its id) and ids of deleted components.
type Adaptation = (Option<(AddEvent, u64)>, Vec<u64>);

/// Environment variable capping worker threads; `0` runs single-threaded.
pub const THREADS_ENV: &str = "VIPS_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub id: u64,
    pub weight: f64,
    pub entropy: f64,
    pub epsilon: f64,
    pub n_eff: f64,
    pub n_new: usize,
    /// Whether the trust-region update was applied.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Cumulative target evaluations.
    pub fevals: u64,
    pub elbo: f64,
    pub num_components: usize,
    pub seconds: f64,
    pub new_samples: usize,
    pub line_search_samples: usize,
    pub added: Option<u64>,
    pub deleted: Vec<u64>,
    pub components: Vec<ComponentStats>,
}

/// Observer called with `(component id, snapshot)` from inside every
/// component update, for checking that all updates share one snapshot.
pub type SnapshotProbe = Arc<dyn Fn(u64, &DMatrix<f64>) + Send + Sync>;

enum Workers {
    Sequential,
    Global,
    Pool(rayon::ThreadPool),
}

impl Workers {
    fn from_env() -> Self {
        match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            None if std::thread::available_parallelism().map_or(1, |n| n.get()) > 1 => Self::Global,
            None => Self::Sequential,
            Some(0) | Some(1) => Self::Sequential,
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(Self::Pool)
                .unwrap_or(Self::Sequential),
        }
    }

    fn map<T, F>(&self, k: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Self::Sequential => (0..k).map(f).collect(),
            Self::Global => (0..k).into_par_iter().map(f).collect(),
            Self::Pool(p) => p.install(|| (0..k).into_par_iter().map(f).collect()),
        }
    }
}

/// Result of one component's M-step, committed after all are computed.
struct ComponentUpdate {
    gaussian: Option<Gaussian>,
    epsilon: f64,
    kappa: f64,
}

/// Optimizer state between iterations.
pub struct Optimizer {
    config: VipsConfig,
    model: MixtureModel,
    db: SampleDatabase,
    adaptation: AdaptationState,
    iteration: usize,
    fevals: u64,
    start: Instant,
    workers: Workers,
    probe: Option<SnapshotProbe>,
}

/// Initial mixture: `initial_components` components with means drawn from
/// `N(0, initial_mean_scale² I)` and covariance `initial_cov_scale · I`.
pub fn initial_mixture(config: &VipsConfig, dim: usize) -> Result<MixtureModel> {
    let k = config.initial_components;
    let comps = (0..k)
        .map(|i| {
            let mut rng = substream(config.seed, 0, i as u64, Phase::Init);
            let z = Gaussian::standard(dim).sample(1, &mut rng);
            let mean = DVector::from_iterator(dim, z.iter().map(|v| v * config.initial_mean_scale));
            Gaussian::isotropic(mean, config.initial_cov_scale)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(vec![1.0 / k as f64; k], comps, config.initial_epsilon, config.initial_kappa)
}

impl Optimizer {
    pub fn new(config: VipsConfig, dim: usize) -> Result<Self> {
        let model = initial_mixture(&config, dim)?;
        Self::with_model(config, model)
    }

    /// Starts from a given mixture instead of the configured initial one.
    pub fn with_model(config: VipsConfig, model: MixtureModel) -> Result<Self> {
        config.validate()?;
        let mut adaptation = AdaptationState::with_deltas(config.deltas.clone());
        adaptation.add_rate = if config.adapt { config.add_rate } else { 0 };
        adaptation.del_rate = config.del_rate;
        adaptation.initial_weight = config.initial_weight;
        adaptation.min_weight = config.min_weight;
        adaptation.initial_epsilon = config.initial_epsilon;
        adaptation.initial_kappa = config.initial_kappa;
        adaptation.clamp = config.candidate_clamp;
        adaptation.samples_per_dim = config.line_search_samples_per_dim;
        adaptation.candidate_origins = config.candidate_cap;
        Ok(Self {
            db: SampleDatabase::with_max_origins(model.dim(), config.db_cap),
            config,
            model,
            adaptation,
            iteration: 0,
            fevals: 0,
            start: Instant::now(),
            workers: Workers::from_env(),
            probe: None,
        })
    }

    /// Runs component updates on the calling thread regardless of
    /// `VIPS_THREADS`.
    pub fn set_single_threaded(&mut self) {
        self.workers = Workers::Sequential;
    }

    pub fn set_probe(&mut self, probe: SnapshotProbe) {
        self.probe = Some(probe);
    }

    pub fn config(&self) -> &VipsConfig {
        &self.config
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut MixtureModel {
        &mut self.model
    }

    pub fn database(&self) -> &SampleDatabase {
        &self.db
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Target evaluations spent by this optimizer.
    pub fn fevals(&self) -> u64 {
        self.fevals
    }

    pub fn into_model(self) -> MixtureModel {
        self.model
    }

    /// Whether the iteration or evaluation budget is exhausted.
    pub fn finished(&self) -> bool {
        self.config.max_iterations.is_some_and(|m| self.iteration >= m)
            || self.config.max_fevals.is_some_and(|m| self.fevals >= m)
    }

    fn n_des(&self) -> usize {
        self.config.n_des_per_dim * self.model.dim()
    }

    /// Runs one iteration. On error the model and adaptation state are
    /// restored to their values before the call.
    pub fn step(&mut self, target: &Target) -> Result<IterationStats> {
        if target.dim() != self.model.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.model.dim(),
                found: target.dim(),
            });
        }
        let saved = (self.model.clone(), self.adaptation.clone());
        let before = target.evaluations();
        let result = if self.config.basic {
            self.basic_iteration(target)
        } else {
            self.iteration_impl(target)
        };
        // Evaluations made before a failure still count.
        self.fevals += target.evaluations() - before;
        match result {
            Ok(mut stats) => {
                stats.fevals = self.fevals;
                self.iteration += 1;
                Ok(stats)
            }
            Err(e) => {
                (self.model, self.adaptation) = saved;
                Err(e)
            }
        }
    }

    fn seconds(&self) -> f64 {
        if self.config.timing {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn adapt_structure(&mut self, target: &Target) -> Result<Adaptation> {
        if !self.config.adapt {
            return Ok((None, Vec::new()));
        }
        let mut rng = substream(self.config.seed, self.iteration as u64, 0, Phase::LineSearch);
        let added = adaptation::maybe_add_component(
            &mut self.model,
            &mut self.adaptation,
            &mut self.db,
            target,
            self.iteration,
            &mut rng,
        )?
        .map(|a| (a, self.model.states().last().map_or(0, |s| s.id)));
        let deleted = adaptation::delete_components(&mut self.model, self.config.del_rate)?;
        Ok((added, deleted))
    }

    fn iteration_impl(&mut self, target: &Target) -> Result<IterationStats> {
        let dim = self.model.dim();
        let (added, deleted) = self.adapt_structure(target)?;

        let mut active = if self.config.reuse {
            let mut rng = substream(self.config.seed, self.iteration as u64, 0, Phase::Selection);
            let n_reuse = self.config.n_reuse_per_dim * dim;
            self.db.select_samples(&self.model, n_reuse, self.config.dissimilarity, &mut rng)?
        } else {
            ActiveSampleSet::new(dim)
        };
        active.compute_weights(&self.model)?;
        let ids: Vec<u64> = self.model.states().iter().map(|s| s.id).collect();
        let (seed, it, n_des) = (self.config.seed, self.iteration as u64, self.n_des());
        let n_new = sample_where_needed(&mut self.db, &mut active, &self.model, n_des, target, |o| {
            substream(seed, it, ids[o], Phase::Sampling)
        })?;
        if active.is_empty() {
            return Err(VipsError::EmptySampleSet);
        }

        let comp_ld = active.component_log_densities().clone();
        let log_resp = self.model.log_responsibilities_from_components(comp_ld.clone());
        let rewards = component_rewards(&self.model, &active, &log_resp)?;
        let weights = update_weights(&rewards, self.config.min_weight);
        self.model.set_weights(weights)?;
        for (o, r) in rewards.iter().enumerate() {
            self.model.state_mut(o).reward = Some(*r);
        }
        adaptation::update_deletion_trackers(&mut self.model, self.config.min_weight, self.config.del_rate);

        // Snapshot under the new weights, shared by all component updates.
        let snapshot = self.model.log_responsibilities_from_components(comp_ld.clone());
        let log_q = self.model.log_density_from_components(&comp_ld);
        let elbo = elbo_from_log_q(&log_q, &active)?;

        let model = &self.model;
        let active_ref = &active;
        let snap = &snapshot;
        let probe = self.probe.clone();
        let cfg = self.config.clone();
        let updates = self.workers.map(model.len(), |o| {
            if let Some(p) = &probe {
                p(model.state(o).id, snap);
            }
            update_component(model.component(o), model.state(o), active_ref, o, snap, &cfg)
        });

        let n_eff = active.n_eff().to_vec();
        let mut components = Vec::with_capacity(self.model.len());
        for (o, u) in updates.into_iter().enumerate() {
            let updated = u.gaussian.is_some();
            if let Some(g) = u.gaussian {
                self.model.replace_component(o, g);
            }
            let st = self.model.state_mut(o);
            st.epsilon = u.epsilon;
            st.kappa = u.kappa;
            components.push(ComponentStats {
                id: st.id,
                weight: self.model.weights()[o],
                entropy: self.model.component(o).entropy(),
                epsilon: u.epsilon,
                n_eff: n_eff[o],
                n_new: n_new[o],
                updated,
            });
        }

        Ok(IterationStats {
            iteration: self.iteration,
            fevals: 0,
            elbo,
            num_components: self.model.len(),
            seconds: self.seconds(),
            new_samples: n_new.iter().sum(),
            line_search_samples: added.as_ref().map_or(0, |a| a.0.line_search_samples),
            added: added.map(|a| a.1),
            deleted,
            components,
        })
    }

    /// Basic variant: every component draws `n_des` fresh samples and only
    /// uses its own samples, without reuse or cross-component weighting.
    fn basic_iteration(&mut self, target: &Target) -> Result<IterationStats> {
        let dim = self.model.dim();
        let (added, deleted) = self.adapt_structure(target)?;
        let k = self.model.len();
        let n = self.n_des();

        let mut batch = DMatrix::zeros(n * k, dim);
        for o in 0..k {
            let id = self.model.state(o).id;
            let mut rng = substream(self.config.seed, self.iteration as u64, id, Phase::Sampling);
            batch.rows_mut(o * n, n).copy_from(&self.model.component(o).sample(n, &mut rng));
        }
        let y = target.evaluate(&batch)?;
        let own: Vec<DMatrix<f64>> = (0..k).map(|o| batch.rows(o * n, n).into_owned()).collect();
        for (o, x) in own.iter().enumerate() {
            self.db.insert_samples(x, &y[o * n..(o + 1) * n], self.model.component(o))?;
        }

        let uniform = vec![1.0 / n as f64; n];
        let mut rewards = Vec::with_capacity(k);
        for (o, x) in own.iter().enumerate() {
            let lr = self.model.log_responsibilities(x)?;
            let mut acc = 0.0;
            for s in 0..n {
                acc += uniform[s] * (y[o * n + s] + lr[(s, o)]);
            }
            rewards.push(acc + self.model.component(o).entropy());
        }
        self.model.set_weights(update_weights(&rewards, self.config.min_weight))?;
        for (o, r) in rewards.iter().enumerate() {
            self.model.state_mut(o).reward = Some(*r);
        }
        adaptation::update_deletion_trackers(&mut self.model, self.config.min_weight, self.config.del_rate);

        // Mixture-level self-normalized estimate over the pooled samples,
        // whose background is the equal-count mixture of all components.
        let comp_ld = self.model.component_log_densities(&batch)?;
        let log_q = self.model.log_density_from_components(&comp_ld);
        let log_k = (k as f64).ln();
        let lw: Vec<f64> = (0..n * k)
            .map(|s| {
                let bg: Vec<f64> = (0..k).map(|o| comp_ld[(s, o)] - log_k).collect();
                log_q[s] - logsumexp(&bg)
            })
            .collect();
        let w = normalize_log_weights(&lw);
        let elbo: f64 = (0..n * k).filter(|&s| w[s] > 0.0).map(|s| w[s] * (y[s] - log_q[s])).sum();

        let mut components = Vec::with_capacity(k);
        let mut updates = Vec::with_capacity(k);
        for (o, x) in own.iter().enumerate() {
            let lr = self.model.log_responsibilities(x)?;
            let yo: Vec<f64> = (0..n).map(|s| y[o * n + s] + lr[(s, o)]).collect();
            let g = self.model.component(o);
            let st = self.model.state(o);
            let mut kappa = st.kappa;
            let mut epsilon = st.epsilon;
            let mut fit = None;
            for _ in 0..=self.config.max_ridge_retries {
                match fit_weighted_quadratic(x, &yo, &uniform, kappa, g) {
                    Ok(s) => {
                        fit = Some(s);
                        kappa = adapt_ridge(kappa, true, self.kappa_range());
                        break;
                    }
                    Err(_) => kappa = adapt_ridge(kappa, false, self.kappa_range()),
                }
            }
            let mut new_g = None;
            if let Some(s) = fit {
                if let Ok(cand) = gva_update(g, &s, epsilon) {
                    let before = weighted_mean(&uniform, &yo) + g.entropy();
                    let ld_new = cand.log_density(x)?;
                    let ld_old = g.log_density(x)?;
                    let lw: Vec<f64> = ld_new.iter().zip(&ld_old).map(|(a, b)| a - b).collect();
                    let after = weighted_mean(&normalize_log_weights(&lw), &yo) + cand.entropy();
                    epsilon = adapt_kl_bound(epsilon, after > before, self.epsilon_range());
                    new_g = Some(cand);
                }
            }
            updates.push(ComponentUpdate {
                gaussian: new_g,
                epsilon,
                kappa,
            });
        }
        for (o, u) in updates.into_iter().enumerate() {
            let updated = u.gaussian.is_some();
            if let Some(g) = u.gaussian {
                self.model.replace_component(o, g);
            }
            let st = self.model.state_mut(o);
            st.epsilon = u.epsilon;
            st.kappa = u.kappa;
            components.push(ComponentStats {
                id: st.id,
                weight: self.model.weights()[o],
                entropy: self.model.component(o).entropy(),
                epsilon: u.epsilon,
                n_eff: n as f64,
                n_new: n,
                updated,
            });
        }
        Ok(IterationStats {
            iteration: self.iteration,
            fevals: 0,
            elbo,
            num_components: k,
            seconds: self.seconds(),
            new_samples: n * k,
            line_search_samples: added.as_ref().map_or(0, |a| a.0.line_search_samples),
            added: added.map(|a| a.1),
            deleted,
            components,
        })
    }

    fn kappa_range(&self) -> (f64, f64) {
        (self.config.kappa_min, self.config.kappa_max)
    }

    fn epsilon_range(&self) -> (f64, f64) {
        (self.config.epsilon_min, self.config.epsilon_max)
    }

    /// Iterates until the budget is exhausted, returning the log.
    pub fn run(&mut self, target: &Target) -> Result<Vec<IterationStats>> {
        let mut log = Vec::new();
        self.run_with(target, |s| log.push(s.clone()))?;
        Ok(log)
    }

    /// Like [`run`](Self::run), handing each iteration's statistics to
    /// `on_iteration` instead of collecting them.
    pub fn run_with<F: FnMut(&IterationStats)>(&mut self, target: &Target, mut on_iteration: F) -> Result<()> {
        while !self.finished() {
            let stats = self.step(target)?;
            log::debug!(
                "iter {} fevals {} elbo {:.4} components {}",
                stats.iteration,
                stats.fevals,
                stats.elbo,
                stats.num_components
            );
            on_iteration(&stats);
        }
        Ok(())
    }
}

/// `Σ w_s y_s` over rows with positive weight and finite `y`.
fn weighted_mean(w: &[f64], y: &[f64]) -> f64 {
    w.iter()
        .zip(y)
        .filter(|(w, y)| **w > 0.0 && y.is_finite())
        .map(|(w, y)| w * y)
        .sum()
}

fn update_component(
    g: &Gaussian,
    state: &ComponentState,
    active: &ActiveSampleSet,
    o: usize,
    snapshot: &DMatrix<f64>,
    cfg: &VipsConfig,
) -> ComponentUpdate {
    let kappa_range = (cfg.kappa_min, cfg.kappa_max);
    let unchanged = ComponentUpdate {
        gaussian: None,
        epsilon: state.epsilon,
        kappa: state.kappa,
    };
    if active.n_eff()[o] <= 0.0 {
        return unchanged;
    }
    let y: Vec<f64> = active
        .log_targets()
        .iter()
        .enumerate()
        .map(|(s, r)| r + snapshot[(s, o)])
        .collect();
    let w: Vec<f64> = active.weights().column(o).iter().copied().collect();

    let mut kappa = state.kappa;
    let mut fit = None;
    for _ in 0..=cfg.max_ridge_retries {
        match fit_weighted_quadratic(active.samples(), &y, &w, kappa, g) {
            Ok(s) => {
                fit = Some(s);
                kappa = adapt_ridge(kappa, true, kappa_range);
                break;
            }
            Err(e) => {
                log::trace!("component {} fit failed at kappa {kappa:e}: {e}", state.id);
                kappa = adapt_ridge(kappa, false, kappa_range);
            }
        }
    }
    let Some(surrogate) = fit else {
        return ComponentUpdate { kappa, ..unchanged };
    };
    let new_g = match gva_update(g, &surrogate, state.epsilon) {
        Ok(n) => n,
        Err(e) => {
            log::debug!("component {} update skipped: {e}", state.id);
            return ComponentUpdate { kappa, ..unchanged };
        }
    };

    let before = weighted_mean(&w, &y) + g.entropy();
    let after = match new_g.log_density(active.samples()) {
        Ok(ld) => {
            let lw: Vec<f64> = ld.iter().zip(active.log_background()).map(|(a, b)| a - b).collect();
            weighted_mean(&normalize_log_weights(&lw), &y) + new_g.entropy()
        }
        Err(_) => f64::NEG_INFINITY,
    };
    ComponentUpdate {
        epsilon: adapt_kl_bound(state.epsilon, after > before, (cfg.epsilon_min, cfg.epsilon_max)),
        gaussian: Some(new_g),
        kappa,
    }
}

/// Final model and per-iteration log of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: MixtureModel,
    pub log: Vec<IterationStats>,
}

/// Validates `config`, then optimizes from the configured initial mixture.
pub fn run(config: &VipsConfig, target: &Target) -> Result<RunOutput> {
    let mut opt = Optimizer::new(config.clone(), target.dim())?;
    let log = opt.run(target)?;
    Ok(RunOutput {
        model: opt.into_model(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::GmmTarget;

    fn gaussian_target(mean: f64, var: f64) -> Target {
        let g = Gaussian::isotropic(DVector::from_element(1, mean), var).unwrap();
        Target::new(GmmTarget::from_mixture(MixtureModel::single(g)))
    }

    #[test]
    fn zero_iterations_leave_model_untouched() {
        let cfg = VipsConfig {
            max_iterations: Some(0),
            ..VipsConfig::default()
        };
        let t = gaussian_target(3.0, 2.0);
        let out = run(&cfg, &t).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(t.evaluations(), 0);
        assert_eq!(out.model.component(0).as_ref(), &Gaussian::standard(1));
    }

    #[test]
    fn one_dimensional_gaussian_is_recovered() {
        let cfg = VipsConfig {
            max_iterations: Some(50),
            adapt: false,
            ..VipsConfig::default()
        };
        let t = gaussian_target(3.0, 2.0);
        let out = run(&cfg, &t).unwrap();
        let truth = Gaussian::isotropic(DVector::from_element(1, 3.0), 2.0).unwrap();
        let kl = out.model.component(0).kl_divergence(&truth).unwrap();
        assert!(kl <= 1e-3, "KL {kl}");
        assert_eq!(out.log.last().unwrap().fevals, t.evaluations());
    }

    #[test]
    fn invalid_config_fails_before_evaluating() {
        let cfg = VipsConfig {
            epsilon_min: -1.0,
            ..VipsConfig::default()
        };
        let t = gaussian_target(0.0, 1.0);
        assert!(run(&cfg, &t).is_err());
        assert_eq!(t.evaluations(), 0);
    }
}
